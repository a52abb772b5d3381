#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "odseg/tensor.hpp"

namespace odseg {

struct NadamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// NAdam in the schedule-free form
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr (b1 m/(1-b1^t) + (1-b1) g/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)
/// Moments are created lazily on the first step and mirror the parameter
/// shapes; parameters are updated in place, in the order given.
class Nadam {
 public:
  explicit Nadam(NadamConfig config = {});

  /// Rejects the whole step (nothing modified, t unchanged) with a
  /// NonFiniteError when any gradient is NaN/Inf.
  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads);

  void set_learning_rate(double lr);
  double learning_rate() const noexcept { return config_.learning_rate; }
  const NadamConfig& config() const noexcept { return config_; }
  std::uint64_t steps() const noexcept { return t_; }

  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

 private:
  NadamConfig config_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace odseg
