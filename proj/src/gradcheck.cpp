#include "odseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "odseg/data.hpp"
#include "odseg/errors.hpp"
#include "odseg/layers.hpp"
#include "odseg/loss.hpp"
#include "odseg/model.hpp"
#include "odseg/rng.hpp"
#include "odseg/training.hpp"

namespace odseg {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

// Central difference of `objective` with respect to x[i]. The step actually
// taken is measured after float rounding so it does not bias the quotient.
template <typename F>
double central_difference(Tensor& x, std::size_t i, double h, F&& objective) {
  const float original = x[i];
  const auto plus = static_cast<float>(original + h);
  const auto minus = static_cast<float>(original - h);
  x[i] = plus;
  const double f_plus = objective();
  x[i] = minus;
  const double f_minus = objective();
  x[i] = original;
  return (f_plus - f_minus) / (static_cast<double>(plus) - static_cast<double>(minus));
}

double weighted_sum(const Tensor& out, const Tensor& weights) {
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) acc += static_cast<double>(out[i]) * weights[i];
  return acc;
}

Tensor dyadic_tensor(const Shape& shape, CounterRng& rng) {
  Tensor t(shape);
  for (float& v : t.values()) v = static_cast<float>(static_cast<int>(rng.below(129)) - 64) / 64.0f;
  return t;
}

Tensor uniform_tensor(const Shape& shape, CounterRng& rng, double lo, double hi) {
  Tensor t(shape);
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

std::size_t pick(CounterRng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

class Tracker {
 public:
  Tracker(std::string name, double tolerance, bool corrupt) : corrupt_(corrupt) {
    row_.component = std::move(name);
    row_.tolerance = tolerance;
  }

  /// Compares every component of `analytic` against finite differences of
  /// `objective` with respect to `x`.
  template <typename F>
  void compare_all(Tensor& x, const Tensor& analytic, double h, F&& objective) {
    for (std::size_t i = 0; i < x.size(); ++i) compare(analytic[i], central_difference(x, i, h, objective));
  }

  void compare(double analytic, double numeric) {
    if (corrupt_ && !corrupted_) {
      analytic = analytic * 1.1 + 1e-3;
      corrupted_ = true;
    }
    row_.worst_relative_error = std::max(row_.worst_relative_error, relative_error(analytic, numeric));
    ++row_.components_checked;
  }

  void next_instance() { ++row_.instances; }

  GradcheckRow finish() {
    row_.passed = row_.components_checked > 0 && row_.worst_relative_error <= row_.tolerance;
    return row_;
  }

 private:
  GradcheckRow row_;
  bool corrupt_;
  bool corrupted_ = false;
};

struct LossProblem {
  Tensor labels;
  Tensor predictions;
};

LossProblem random_loss_problem(CounterRng& rng) {
  const std::size_t n = pick(rng, 2, 64);
  LossProblem p{Tensor({n}), Tensor({n})};
  for (std::size_t i = 0; i < n; ++i) {
    p.labels[i] = rng.bernoulli(0.3) ? 1.0f : 0.0f;
    p.predictions[i] = static_cast<float>(rng.uniform(0.05, 0.95));
  }
  p.labels[rng.below(n)] = 1.0f;  // the Jaccard term needs a disc pixel
  return p;
}

template <typename LossFn, typename GradFn>
GradcheckRow check_loss(const char* name, double tolerance, std::uint64_t seed, std::size_t instances, bool corrupt,
                        LossFn loss, GradFn grad) {
  CounterRng rng(seed, fnv1a64(name));
  Tracker tracker(name, tolerance, corrupt);
  for (std::size_t k = 0; k < instances; ++k) {
    LossProblem p = random_loss_problem(rng);
    const Tensor analytic = grad(PixelPartition(p.labels, p.predictions));
    tracker.compare_all(p.predictions, analytic, kLossStep,
                        [&] { return loss(PixelPartition(p.labels, p.predictions)); });
    tracker.next_instance();
  }
  return tracker.finish();
}

// Which side of every ReLU and pooling kink the network sits on.
std::vector<std::uint32_t> kink_pattern(const ForwardPass& pass) {
  std::vector<std::uint32_t> out;
  for (std::size_t li = 0; li + 1 < pass.pre_activation.size(); ++li) {
    for (float v : pass.pre_activation[li].values()) out.push_back(v > 0.0f);
  }
  for (const PoolCache& p : pass.pool) out.insert(out.end(), p.argmax.begin(), p.argmax.end());
  return out;
}

}  // namespace

GradcheckRow check_bce(std::uint64_t seed, std::size_t instances, bool corrupt) {
  return check_loss(
      "bce", kBceTolerance, seed, instances, corrupt, [](const PixelPartition& p) { return bce_loss(p); },
      [](const PixelPartition& p) { return bce_grad(p); });
}

GradcheckRow check_jaccard(std::uint64_t seed, std::size_t instances, bool corrupt) {
  return check_loss(
      "jaccard", kLossTolerance, seed, instances, corrupt, [](const PixelPartition& p) { return jaccard_loss(p); },
      [](const PixelPartition& p) { return jaccard_grad(p); });
}

GradcheckRow check_combined(std::uint64_t seed, std::size_t instances, bool corrupt) {
  return check_loss(
      "combined", kLossTolerance, seed, instances, corrupt, [](const PixelPartition& p) { return combined_loss(p); },
      [](const PixelPartition& p) { return combined_grad(p); });
}

GradcheckRow check_conv(std::uint64_t seed, std::size_t instances, bool corrupt) {
  CounterRng rng(seed, fnv1a64("conv"));
  Tracker tracker("conv", kLayerTolerance, corrupt);
  for (std::size_t k = 0; k < instances; ++k) {
    std::size_t b = pick(rng, 1, 2), h = pick(rng, 2, 5), w = pick(rng, 2, 5);
    std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
    std::size_t ks = rng.bernoulli(0.8) ? 3 : 1;
    if (k == 0) b = 1, h = w = 4, cin = cout = 2, ks = 3;
    Tensor input = dyadic_tensor({b, h, w, cin}, rng);
    ConvParams params{dyadic_tensor({ks, ks, cin, cout}, rng), dyadic_tensor({cout}, rng)};
    const Tensor weights = dyadic_tensor({b, h, w, cout}, rng);
    ConvCache cache;
    conv2d_forward(input, params, &cache);
    const ConvGrads g = conv2d_backward(cache, params, weights);
    auto objective = [&] { return weighted_sum(conv2d_forward(input, params), weights); };
    tracker.compare_all(input, g.input, kConvStep, objective);
    tracker.compare_all(params.kernels, g.kernels, kConvStep, objective);
    tracker.compare_all(params.biases, g.biases, kConvStep, objective);
    tracker.next_instance();
  }
  return tracker.finish();
}

GradcheckRow check_pool(std::uint64_t seed, std::size_t instances, bool corrupt) {
  CounterRng rng(seed, fnv1a64("maxpool"));
  Tracker tracker("maxpool", kLayerTolerance, corrupt);
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t h = 2 * pick(rng, 1, 4), w = 2 * pick(rng, 1, 4), c = pick(rng, 1, 2);
    // Distinct values spaced well beyond the step keep every window away
    // from a tie, where the maximum is not differentiable.
    const std::size_t n = h * w * c;
    std::vector<std::size_t> order = seeded_permutation(n, rng.next_u64());
    Tensor input({1, h, w, c});
    for (std::size_t i = 0; i < n; ++i) input[i] = static_cast<float>(order[i]) * 0.05f - 1.0f;
    const Tensor weights = uniform_tensor({1, h / 2, w / 2, c}, rng, -1.0, 1.0);
    PoolCache cache;
    maxpool2_forward(input, &cache);
    const Tensor g = maxpool2_backward(cache, weights);
    tracker.compare_all(input, g, kLayerStep, [&] { return weighted_sum(maxpool2_forward(input), weights); });
    tracker.next_instance();
  }
  return tracker.finish();
}

GradcheckRow check_upsample(std::uint64_t seed, std::size_t instances, bool corrupt) {
  CounterRng rng(seed, fnv1a64("upsample"));
  Tracker tracker("upsample", kLayerTolerance, corrupt);
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t h = pick(rng, 1, 4), w = pick(rng, 1, 4), c = pick(rng, 1, 3);
    Tensor input = uniform_tensor({1, h, w, c}, rng, -1.0, 1.0);
    const Tensor weights = uniform_tensor({1, 2 * h, 2 * w, c}, rng, -1.0, 1.0);
    const Tensor g = upsample2_backward(weights);
    tracker.compare_all(input, g, kLayerStep, [&] { return weighted_sum(upsample2_forward(input), weights); });
    tracker.next_instance();
  }
  return tracker.finish();
}

GradcheckRow check_concat(std::uint64_t seed, std::size_t instances, bool corrupt) {
  CounterRng rng(seed, fnv1a64("concat"));
  Tracker tracker("concat", kLayerTolerance, corrupt);
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t h = pick(rng, 1, 4), w = pick(rng, 1, 4), ca = pick(rng, 1, 3), cb = pick(rng, 1, 3);
    Tensor a = uniform_tensor({1, h, w, ca}, rng, -1.0, 1.0);
    Tensor b = uniform_tensor({1, h, w, cb}, rng, -1.0, 1.0);
    const Tensor weights = uniform_tensor({1, h, w, ca + cb}, rng, -1.0, 1.0);
    auto [ga, gb] = split_channels(weights, ca);
    auto objective = [&] { return weighted_sum(concat_channels(a, b), weights); };
    tracker.compare_all(a, ga, kLayerStep, objective);
    tracker.compare_all(b, gb, kLayerStep, objective);
    tracker.next_instance();
  }
  return tracker.finish();
}

GradcheckRow check_relu(std::uint64_t seed, std::size_t instances, bool corrupt) {
  CounterRng rng(seed, fnv1a64("relu"));
  Tracker tracker("relu", kLayerTolerance, corrupt);
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t n = pick(rng, 1, 32);
    Tensor input({1, 1, n, 1});
    for (float& v : input.values()) {
      do {
        v = static_cast<float>(rng.uniform(-1.0, 1.0));
      } while (std::abs(v) < 1e-2f);  // stay clear of the kink
    }
    const Tensor weights = uniform_tensor(input.shape(), rng, -1.0, 1.0);
    const Tensor g = relu_backward(input, weights);
    tracker.compare_all(input, g, kLayerStep, [&] { return weighted_sum(relu_forward(input), weights); });
    tracker.next_instance();
  }
  return tracker.finish();
}

GradcheckRow check_sigmoid(std::uint64_t seed, std::size_t instances, bool corrupt) {
  CounterRng rng(seed, fnv1a64("sigmoid"));
  Tracker tracker("sigmoid", kSigmoidTolerance, corrupt);
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t n = pick(rng, 1, 32);
    Tensor input = uniform_tensor({1, 1, n, 1}, rng, -3.0, 3.0);
    const Tensor weights = uniform_tensor(input.shape(), rng, -1.0, 1.0);
    const Tensor g = sigmoid_backward(sigmoid_forward(input), weights);
    tracker.compare_all(input, g, kSigmoidStep, [&] { return weighted_sum(sigmoid_forward(input), weights); });
    tracker.next_instance();
  }
  return tracker.finish();
}

GradcheckRow check_model(std::uint64_t seed, std::size_t size, std::size_t parameters, bool corrupt) {
  CounterRng rng(seed, fnv1a64("model"));
  Tracker tracker("model", kModelTolerance, corrupt);
  // Only initialisation is well conditioned here; with the fixed encoder
  // stddev deep gradients sit below float resolution of the loss.
  ModelConfig config;
  config.height = config.width = size;
  config.width_multiplier = 0.125;
  config.seed = seed;
  config.he_encoder_init = true;
  Model model(config);
  const Tensor input = uniform_tensor({1, size, size, 3}, rng, 0.0, 1.0);
  Tensor labels({1, size, size, 1});
  const double cy = rng.uniform(0.3, 0.7) * size, cx = rng.uniform(0.3, 0.7) * size, r = size * 0.2;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
      labels.at(0, y, x, 0) = dy * dy + dx * dx <= r * r ? 1.0f : 0.0f;
    }
  }
  auto loss_of = [&](const Tensor& pred) { return combined_loss(PixelPartition(labels, pred)); };
  const ForwardPass pass = model.forward(input);
  const GradientStore grads = model.backward(pass, combined_grad(PixelPartition(labels, pass.output)));

  std::vector<Tensor*> params = model.parameter_tensors();
  const std::vector<const Tensor*> analytic = Model::gradient_tensors(grads);
  // Entries whose gradient is small next to the rest of their tensor are
  // dominated by float noise in the loss difference, so sampling is
  // restricted to informative ones. Each entry is checked at most once.
  std::vector<double> largest(analytic.size(), 0.0);
  for (std::size_t t = 0; t < analytic.size(); ++t) {
    for (float v : analytic[t]->values()) largest[t] = std::max(largest[t], static_cast<double>(std::abs(v)));
  }
  const std::vector<std::uint32_t> base_pattern = kink_pattern(pass);
  std::size_t total = 0;
  for (const Tensor* p : params) total += p->size();
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::size_t attempts = 0;
  while (tracker.finish().components_checked < parameters && attempts < 100000) {
    ++attempts;
    // Uniform over all parameter entries, not over tensors.
    std::size_t t = 0, i = rng.below(total);
    while (i >= params[t]->size()) i -= params[t++]->size();
    const double a = (*analytic[t])[i];
    if (std::abs(a) < 0.1 * largest[t] || !seen.insert({t, i}).second) continue;
    // A step that moves any unit across a kink measures a one-sided
    // slope, not the derivative; such entries are resampled.
    bool crossed = false;
    const double numeric = central_difference(*params[t], i, kModelStep, [&] {
      const ForwardPass p = model.forward(input);
      crossed = crossed || kink_pattern(p) != base_pattern;
      return loss_of(p.output);
    });
    if (crossed) continue;
    tracker.compare(a, numeric);
  }
  tracker.next_instance();
  return tracker.finish();
}

bool GradcheckReport::all_passed() const {
  return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const GradcheckRow& r) { return r.passed; });
}

std::string GradcheckReport::to_text() const {
  std::ostringstream os;
  char buf[200];
  for (const GradcheckRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%-10s instances=%-4zu checked=%-6zu worst_rel_err=%.3e tol=%.0e %s\n",
                  r.component.c_str(), r.instances, r.components_checked, r.worst_relative_error, r.tolerance,
                  r.passed ? "PASS" : "FAIL");
    os << buf;
  }
  return os.str();
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  if (options.instances == 0) throw ParameterError("gradcheck needs at least one instance");
  if (options.include_model && (options.model_size == 0 || options.model_size % 32 != 0)) {
    throw ParameterError("gradcheck model size must be a positive multiple of 32");
  }
  const auto corrupt = [&](const char* name) { return options.corrupt_component == name; };
  const std::uint64_t s = options.seed;
  const std::size_t n = options.instances;
  GradcheckReport report;
  report.rows.push_back(check_bce(s, n, corrupt("bce")));
  report.rows.push_back(check_jaccard(s, n, corrupt("jaccard")));
  report.rows.push_back(check_combined(s, n, corrupt("combined")));
  report.rows.push_back(check_conv(s, n, corrupt("conv")));
  report.rows.push_back(check_pool(s, n, corrupt("maxpool")));
  report.rows.push_back(check_upsample(s, n, corrupt("upsample")));
  report.rows.push_back(check_concat(s, n, corrupt("concat")));
  report.rows.push_back(check_relu(s, n, corrupt("relu")));
  report.rows.push_back(check_sigmoid(s, n, corrupt("sigmoid")));
  if (options.include_model) {
    report.rows.push_back(check_model(s, options.model_size, options.model_parameters, corrupt("model")));
  }
  return report;
}

}  // namespace odseg
