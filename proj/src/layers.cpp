#include "odseg/layers.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "odseg/errors.hpp"

namespace odseg {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + ": expected [B,H,W,C], got " + shape_to_string(t.shape()));
  }
}

void validate_conv(const Tensor& input, const ConvParams& params) {
  require_rank4(input, "conv2d");
  const Shape& k = params.kernels.shape();
  if (k.size() != 4 || k[0] != k[1] || k[0] % 2 == 0) {
    throw ShapeError("conv2d: kernels must be [k,k,c_in,c_out] with odd k, got " + shape_to_string(k));
  }
  if (params.biases.shape() != Shape{k[3]}) throw ShapeError("conv2d: bias shape must be [c_out]");
  if (input.dim(3) != k[2]) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(3)) + " channels, kernel expects " +
                     std::to_string(k[2]));
  }
}

// Gathers the same-padded k x k neighbourhood of every pixel of one batch
// item into a row of `patches` ([H*W, k*k*C], row-major, (dy, dx, c) order
// matching the kernel layout).
void im2col(const float* image, std::size_t h, std::size_t w, std::size_t c, std::size_t k, float* patches) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t row_len = k * k * c;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      float* row = patches + (y * w + x) * row_len;
      for (std::size_t dy = 0; dy < k; ++dy) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - pad;
        for (std::size_t dx = 0; dx < k; ++dx) {
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) - pad;
          float* dst = row + (dy * k + dx) * c;
          if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(h) || sx >= static_cast<std::ptrdiff_t>(w)) {
            std::fill(dst, dst + c, 0.0f);
          } else {
            const float* src = image + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * c;
            std::copy(src, src + c, dst);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds patch gradients back onto the image.
void col2im(const float* patches, std::size_t h, std::size_t w, std::size_t c, std::size_t k, float* image) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t row_len = k * k * c;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const float* row = patches + (y * w + x) * row_len;
      for (std::size_t dy = 0; dy < k; ++dy) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - pad;
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t dx = 0; dx < k; ++dx) {
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) - pad;
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
          const float* src = row + (dy * k + dx) * c;
          float* dst = image + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * c;
          for (std::size_t i = 0; i < c; ++i) dst[i] += src[i];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const ConvParams& params, ConvCache* cache) {
  validate_conv(input, params);
  const std::size_t batch = input.dim(0), h = input.dim(1), w = input.dim(2), cin = input.dim(3);
  const std::size_t k = params.kernel_size(), cout = params.out_channels();
  const std::size_t pixels = h * w, depth = k * k * cin;

  Tensor out({batch, h, w, cout});
  ConstMatrixMap kernel(params.kernels.data(), static_cast<Eigen::Index>(depth), static_cast<Eigen::Index>(cout));
  Eigen::Map<const Eigen::RowVectorXf> bias(params.biases.data(), static_cast<Eigen::Index>(cout));

  std::vector<float> patches(k == 1 ? 0 : pixels * depth);
  for (std::size_t b = 0; b < batch; ++b) {
    const float* image = input.data() + b * pixels * cin;
    const float* cols = image;
    if (k != 1) {
      im2col(image, h, w, cin, k, patches.data());
      cols = patches.data();
    }
    ConstMatrixMap lhs(cols, static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(depth));
    MatrixMap result(out.data() + b * pixels * cout, static_cast<Eigen::Index>(pixels),
                     static_cast<Eigen::Index>(cout));
    result.noalias() = lhs * kernel;
    result.rowwise() += bias;
  }
  if (cache) cache->input = input;
  return out;
}

ConvGrads conv2d_backward(const ConvCache& cache, const ConvParams& params, const Tensor& upstream) {
  const Tensor& input = cache.input;
  validate_conv(input, params);
  const std::size_t batch = input.dim(0), h = input.dim(1), w = input.dim(2), cin = input.dim(3);
  const std::size_t k = params.kernel_size(), cout = params.out_channels();
  if (upstream.shape() != Shape{batch, h, w, cout}) {
    throw ShapeError("conv2d_backward: upstream shape " + shape_to_string(upstream.shape()) +
                     " does not match forward output");
  }
  const std::size_t pixels = h * w, depth = k * k * cin;

  ConvGrads grads{Tensor(input.shape()), Tensor(params.kernels.shape()), Tensor(params.biases.shape())};
  ConstMatrixMap kernel(params.kernels.data(), static_cast<Eigen::Index>(depth), static_cast<Eigen::Index>(cout));
  MatrixMap grad_kernel(grads.kernels.data(), static_cast<Eigen::Index>(depth), static_cast<Eigen::Index>(cout));

  std::vector<double> bias_acc(cout, 0.0);
  std::vector<float> patches(pixels * depth);
  std::vector<float> grad_patches(k == 1 ? 0 : pixels * depth);
  for (std::size_t b = 0; b < batch; ++b) {
    const float* image = input.data() + b * pixels * cin;
    const float* up = upstream.data() + b * pixels * cout;
    ConstMatrixMap up_mat(up, static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(cout));

    const float* cols = image;
    if (k != 1) {
      im2col(image, h, w, cin, k, patches.data());
      cols = patches.data();
    }
    ConstMatrixMap lhs(cols, static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(depth));
    grad_kernel.noalias() += lhs.transpose() * up_mat;

    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t o = 0; o < cout; ++o) bias_acc[o] += up[p * cout + o];
    }

    float* grad_image = grads.input.data() + b * pixels * cin;
    if (k == 1) {
      MatrixMap gi(grad_image, static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(cin));
      gi.noalias() = up_mat * kernel.transpose();
    } else {
      MatrixMap gp(grad_patches.data(), static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(depth));
      gp.noalias() = up_mat * kernel.transpose();
      col2im(grad_patches.data(), h, w, cin, k, grad_image);
    }
  }
  for (std::size_t o = 0; o < cout; ++o) grads.biases[o] = static_cast<float>(bias_acc[o]);
  return grads;
}

Tensor maxpool2_forward(const Tensor& input, PoolCache* cache) {
  require_rank4(input, "maxpool2");
  const std::size_t batch = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2: spatial dims must be even, got " + shape_to_string(input.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({batch, oh, ow, c});
  std::vector<std::uint32_t> argmax(out.size());
  const float* in = input.data();
  std::size_t o = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        for (std::size_t ch = 0; ch < c; ++ch, ++o) {
          std::size_t best = ((b * h + 2 * y) * w + 2 * x) * c + ch;
          // Scan order (0,0), (0,1), (1,0), (1,1); strict > keeps the first tie.
          const std::size_t candidates[3] = {best + c, best + w * c, best + w * c + c};
          for (std::size_t idx : candidates) {
            if (in[idx] > in[best]) best = idx;
          }
          out[o] = in[best];
          argmax[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  if (cache) {
    cache->input_shape = input.shape();
    cache->argmax = std::move(argmax);
  }
  return out;
}

Tensor maxpool2_backward(const PoolCache& cache, const Tensor& upstream) {
  if (upstream.size() != cache.argmax.size()) {
    throw ShapeError("maxpool2_backward: upstream does not match the cached forward output");
  }
  Tensor grad(cache.input_shape);
  for (std::size_t i = 0; i < upstream.size(); ++i) grad[cache.argmax[i]] += upstream[i];
  return grad;
}

Tensor upsample2_forward(const Tensor& input) {
  require_rank4(input, "upsample2");
  const std::size_t batch = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
  Tensor out({batch, 2 * h, 2 * w, c});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t x = 0; x < 2 * w; ++x) {
        const float* src = input.data() + ((b * h + y / 2) * w + x / 2) * c;
        std::copy(src, src + c, out.data() + ((b * 2 * h + y) * 2 * w + x) * c);
      }
    }
  }
  return out;
}

Tensor upsample2_backward(const Tensor& upstream) {
  require_rank4(upstream, "upsample2_backward");
  const std::size_t batch = upstream.dim(0), h = upstream.dim(1), w = upstream.dim(2), c = upstream.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("upsample2_backward: spatial dims must be even");
  Tensor grad({batch, h / 2, w / 2, c});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const float* src = upstream.data() + ((b * h + y) * w + x) * c;
        float* dst = grad.data() + ((b * (h / 2) + y / 2) * (w / 2) + x / 2) * c;
        for (std::size_t i = 0; i < c; ++i) dst[i] += src[i];
      }
    }
  }
  return grad;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  const std::size_t ca = a.dim(3), cb = b.dim(3);
  const std::size_t positions = a.size() / ca;
  Tensor out({a.dim(0), a.dim(1), a.dim(2), ca + cb});
  for (std::size_t p = 0; p < positions; ++p) {
    float* dst = out.data() + p * (ca + cb);
    std::copy(a.data() + p * ca, a.data() + (p + 1) * ca, dst);
    std::copy(b.data() + p * cb, b.data() + (p + 1) * cb, dst + ca);
  }
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t a_channels) {
  require_rank4(t, "split_channels");
  const std::size_t c = t.dim(3);
  if (a_channels == 0 || a_channels >= c) throw ShapeError("split_channels: split point out of range");
  const std::size_t cb = c - a_channels;
  Tensor a({t.dim(0), t.dim(1), t.dim(2), a_channels});
  Tensor b({t.dim(0), t.dim(1), t.dim(2), cb});
  const std::size_t positions = t.size() / c;
  for (std::size_t p = 0; p < positions; ++p) {
    const float* src = t.data() + p * c;
    std::copy(src, src + a_channels, a.data() + p * a_channels);
    std::copy(src + a_channels, src + c, b.data() + p * cb);
  }
  return {std::move(a), std::move(b)};
}

Tensor relu_forward(const Tensor& x) {
  Tensor out(x);
  for (float& v : out.values()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& upstream) {
  require_same_shape(input, upstream, "relu_backward");
  Tensor grad(upstream);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(input[i] > 0.0f)) grad[i] = 0.0f;
  }
  return grad;
}

Tensor sigmoid_forward(const Tensor& x) {
  Tensor out(x);
  for (float& v : out.values()) {
    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(v)));
    v = std::clamp(static_cast<float>(s), kSigmoidFloor, 1.0f - kSigmoidFloor);
  }
  return out;
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& upstream) {
  require_same_shape(output, upstream, "sigmoid_backward");
  Tensor grad(upstream);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const float s = output[i];
    grad[i] *= s * (1.0f - s);
  }
  return grad;
}

}  // namespace odseg
