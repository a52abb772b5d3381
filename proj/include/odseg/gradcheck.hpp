#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "odseg/tensor.hpp"

namespace odseg {

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps
/// components that are zero in both routes from dividing by ~0.
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct GradcheckRow {
  std::string component;
  std::size_t instances = 0;
  std::size_t components_checked = 0;
  double worst_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t instances = 100;
  /// Input size of the end-to-end model check (multiple of 32).
  std::size_t model_size = 32;
  std::size_t model_parameters = 20;
  bool include_model = true;
  /// Test hook: perturbs the analytic gradient of this component so the
  /// detector can be shown to fire.
  std::string corrupt_component;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  bool all_passed() const;
  std::string to_text() const;
};

// Tolerances and step sizes used by the suite.
inline constexpr double kLayerStep = 1e-3;
inline constexpr double kLossStep = 1e-4;
inline constexpr double kLayerTolerance = 1e-3;
inline constexpr double kLossTolerance = 1e-3;
inline constexpr double kBceTolerance = 1e-4;
/// Convolution values are drawn on a 1/64 grid and stepped by 2^-10, so
/// every float sum in the forward pass is exact.
inline constexpr double kConvStep = 1.0 / 1024.0;
/// Sigmoid outputs carry float rounding; the larger step keeps that noise
/// well under the tighter tolerance while truncation stays below 2e-5.
inline constexpr double kSigmoidStep = 1e-2;
inline constexpr double kSigmoidTolerance = 1e-4;
inline constexpr double kModelStep = 1e-2;
inline constexpr double kModelTolerance = 2e-2;

// Individual checks; each returns one row. `instances` random problems.
GradcheckRow check_bce(std::uint64_t seed, std::size_t instances, bool corrupt = false);
GradcheckRow check_jaccard(std::uint64_t seed, std::size_t instances, bool corrupt = false);
GradcheckRow check_combined(std::uint64_t seed, std::size_t instances, bool corrupt = false);
GradcheckRow check_conv(std::uint64_t seed, std::size_t instances, bool corrupt = false);
GradcheckRow check_pool(std::uint64_t seed, std::size_t instances, bool corrupt = false);
GradcheckRow check_upsample(std::uint64_t seed, std::size_t instances, bool corrupt = false);
GradcheckRow check_concat(std::uint64_t seed, std::size_t instances, bool corrupt = false);
GradcheckRow check_relu(std::uint64_t seed, std::size_t instances, bool corrupt = false);
GradcheckRow check_sigmoid(std::uint64_t seed, std::size_t instances, bool corrupt = false);
GradcheckRow check_model(std::uint64_t seed, std::size_t size, std::size_t parameters, bool corrupt = false);

GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace odseg
