#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "odseg/tensor.hpp"

namespace odseg {

/// Convolution parameters: kernels [kh, kw, c_in, c_out] and biases [c_out].
/// Kernels are square with odd size; padding is "same", stride 1.
struct ConvParams {
  Tensor kernels;
  Tensor biases;

  std::size_t kernel_size() const { return kernels.dim(0); }
  std::size_t in_channels() const { return kernels.dim(2); }
  std::size_t out_channels() const { return kernels.dim(3); }
};

struct ConvCache {
  Tensor input;
};

struct ConvGrads {
  Tensor input;
  Tensor kernels;
  Tensor biases;
};

/// `cache` may be null when no backward pass will follow.
Tensor conv2d_forward(const Tensor& input, const ConvParams& params, ConvCache* cache = nullptr);
ConvGrads conv2d_backward(const ConvCache& cache, const ConvParams& params, const Tensor& upstream);

struct PoolCache {
  Shape input_shape;
  // Flat input index of the winning element for every output element.
  std::vector<std::uint32_t> argmax;
};

/// 2x2 window, stride 2. Ties go to the first element in row-major scan order.
Tensor maxpool2_forward(const Tensor& input, PoolCache* cache = nullptr);
Tensor maxpool2_backward(const PoolCache& cache, const Tensor& upstream);

/// Nearest-neighbour 2x replication; backward sums each 2x2 block.
Tensor upsample2_forward(const Tensor& input);
Tensor upsample2_backward(const Tensor& upstream);

/// Channel concatenation, `a` first.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Inverse of concat_channels: first `a_channels` channels, then the rest.
std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t a_channels);

Tensor relu_forward(const Tensor& x);
/// Masks `upstream` where the forward input was <= 0 (derivative at 0 is 0).
Tensor relu_backward(const Tensor& input, const Tensor& upstream);

/// Outputs are clamped into [kSigmoidFloor, 1 - kSigmoidFloor] so they stay
/// strictly inside (0, 1) in float precision.
Tensor sigmoid_forward(const Tensor& x);
Tensor sigmoid_backward(const Tensor& output, const Tensor& upstream);

inline constexpr float kSigmoidFloor = 1e-7f;

}  // namespace odseg
