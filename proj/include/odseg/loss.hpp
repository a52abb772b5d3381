#pragma once

#include <string_view>

#include "odseg/tensor.hpp"

namespace odseg {

/// Labels (1 = disc, 0 = background) and predicted disc probabilities over
/// the same pixels. All pixels of a batch form one partition.
class PixelPartition {
 public:
  /// Throws ShapeError on shape mismatch and ParameterError when labels are
  /// not binary, predictions leave [0,1], or the tensors are empty.
  PixelPartition(const Tensor& labels, const Tensor& predictions);

  const Tensor& labels() const noexcept { return labels_; }
  const Tensor& predictions() const noexcept { return predictions_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t disc_count() const noexcept { return disc_count_; }
  std::size_t background_count() const noexcept { return size() - disc_count_; }

 private:
  const Tensor& labels_;
  const Tensor& predictions_;
  std::size_t disc_count_ = 0;
};

inline constexpr float kBceEpsilon = 1e-7f;

/// Mean binary cross-entropy; predictions are clipped to [eps, 1-eps].
double bce_loss(const PixelPartition& part);
Tensor bce_grad(const PixelPartition& part);

enum class DegenerateLabels {
  kReject,  // throw DegenerateLabelError when no disc pixel exists
  kSmooth,  // fall back to S_b / (S_b + 1)
};

/// Soft Jaccard distance 1 - sum_d(p) / (|Y_d| + sum_b(p)).
double jaccard_loss(const PixelPartition& part, DegenerateLabels policy = DegenerateLabels::kReject);
/// Exact derivative of jaccard_loss with respect to every prediction.
Tensor jaccard_grad(const PixelPartition& part, DegenerateLabels policy = DegenerateLabels::kReject);

double combined_loss(const PixelPartition& part, DegenerateLabels policy = DegenerateLabels::kReject);
Tensor combined_grad(const PixelPartition& part, DegenerateLabels policy = DegenerateLabels::kReject);

enum class LossKind { kBce, kJaccard, kCombined };

LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(LossKind kind);

double loss_value(LossKind kind, const PixelPartition& part, DegenerateLabels policy);
Tensor loss_grad(LossKind kind, const PixelPartition& part, DegenerateLabels policy);

}  // namespace odseg
