#include "odseg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "odseg/errors.hpp"

namespace odseg {

namespace {

struct JaccardSums {
  double disc_sum = 0.0;        // sum of predictions over disc pixels
  double background_sum = 0.0;  // sum of predictions over background pixels
};

JaccardSums jaccard_sums(const PixelPartition& part) {
  JaccardSums s;
  const Tensor& y = part.labels();
  const Tensor& p = part.predictions();
  for (std::size_t i = 0; i < part.size(); ++i) {
    if (y[i] > 0.5f) {
      s.disc_sum += p[i];
    } else {
      s.background_sum += p[i];
    }
  }
  return s;
}

void check_degenerate(const PixelPartition& part, DegenerateLabels policy) {
  if (part.disc_count() == 0 && policy == DegenerateLabels::kReject) {
    throw DegenerateLabelError("jaccard loss: labels contain no disc pixel");
  }
}

double clipped(float p) {
  return std::clamp(static_cast<double>(p), static_cast<double>(kBceEpsilon), 1.0 - static_cast<double>(kBceEpsilon));
}

}  // namespace

PixelPartition::PixelPartition(const Tensor& labels, const Tensor& predictions)
    : labels_(labels), predictions_(predictions) {
  require_same_shape(labels, predictions, "pixel partition");
  if (labels.empty()) throw ParameterError("pixel partition: empty tensors");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const float y = labels[i];
    if (y != 0.0f && y != 1.0f) throw ParameterError("pixel partition: labels must be 0 or 1");
    const float p = predictions[i];
    if (!(p >= 0.0f && p <= 1.0f)) throw ParameterError("pixel partition: predictions must lie in [0,1]");
    if (y == 1.0f) ++disc_count_;
  }
}

double bce_loss(const PixelPartition& part) {
  const Tensor& y = part.labels();
  const Tensor& p = part.predictions();
  double acc = 0.0;
  for (std::size_t i = 0; i < part.size(); ++i) {
    const double q = clipped(p[i]);
    acc += y[i] > 0.5f ? std::log(q) : std::log(1.0 - q);
  }
  return -acc / static_cast<double>(part.size());
}

Tensor bce_grad(const PixelPartition& part) {
  const Tensor& y = part.labels();
  const Tensor& p = part.predictions();
  const double inv_n = 1.0 / static_cast<double>(part.size());
  Tensor grad(p.shape());
  for (std::size_t i = 0; i < part.size(); ++i) {
    const double q = clipped(p[i]);
    const double yi = y[i];
    grad[i] = static_cast<float>(-inv_n * (yi / q - (1.0 - yi) / (1.0 - q)));
  }
  return grad;
}

double jaccard_loss(const PixelPartition& part, DegenerateLabels policy) {
  check_degenerate(part, policy);
  const JaccardSums s = jaccard_sums(part);
  if (part.disc_count() == 0) return s.background_sum / (s.background_sum + 1.0);
  const double denom = static_cast<double>(part.disc_count()) + s.background_sum;
  return 1.0 - s.disc_sum / denom;
}

Tensor jaccard_grad(const PixelPartition& part, DegenerateLabels policy) {
  check_degenerate(part, policy);
  const JaccardSums s = jaccard_sums(part);
  const Tensor& y = part.labels();
  Tensor grad(y.shape());
  if (part.disc_count() == 0) {
    const double d = s.background_sum + 1.0;
    grad.fill(static_cast<float>(1.0 / (d * d)));
    return grad;
  }
  const double denom = static_cast<double>(part.disc_count()) + s.background_sum;
  const auto disc_term = static_cast<float>(-1.0 / denom);
  const auto background_term = static_cast<float>(s.disc_sum / (denom * denom));
  for (std::size_t i = 0; i < part.size(); ++i) grad[i] = y[i] > 0.5f ? disc_term : background_term;
  return grad;
}

double combined_loss(const PixelPartition& part, DegenerateLabels policy) {
  return bce_loss(part) + jaccard_loss(part, policy);
}

Tensor combined_grad(const PixelPartition& part, DegenerateLabels policy) {
  return add(bce_grad(part), jaccard_grad(part, policy));
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "bce") return LossKind::kBce;
  if (name == "jaccard") return LossKind::kJaccard;
  if (name == "combined") return LossKind::kCombined;
  throw ParameterError("unknown loss '" + std::string(name) + "' (expected bce, jaccard or combined)");
}

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kBce:
      return "bce";
    case LossKind::kJaccard:
      return "jaccard";
    case LossKind::kCombined:
      return "combined";
  }
  return "combined";
}

double loss_value(LossKind kind, const PixelPartition& part, DegenerateLabels policy) {
  switch (kind) {
    case LossKind::kBce:
      return bce_loss(part);
    case LossKind::kJaccard:
      return jaccard_loss(part, policy);
    case LossKind::kCombined:
      return combined_loss(part, policy);
  }
  return combined_loss(part, policy);
}

Tensor loss_grad(LossKind kind, const PixelPartition& part, DegenerateLabels policy) {
  switch (kind) {
    case LossKind::kBce:
      return bce_grad(part);
    case LossKind::kJaccard:
      return jaccard_grad(part, policy);
    case LossKind::kCombined:
      return combined_grad(part, policy);
  }
  return combined_grad(part, policy);
}

}  // namespace odseg
