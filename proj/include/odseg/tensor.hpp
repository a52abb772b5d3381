#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace odseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major float tensor. Image-like tensors use [batch, height,
/// width, channels]; single images drop the batch axis.
class Tensor {
 public:
  Tensor() = default;
  /// Throws ShapeError on an empty shape or a zero dimension.
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0f); }
  static Tensor full(Shape shape, float value) { return Tensor(std::move(shape), value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  // Rank-4 [B,H,W,C] element access.
  float& at(std::size_t b, std::size_t y, std::size_t x, std::size_t c) noexcept {
    return data_[((b * shape_[1] + y) * shape_[2] + x) * shape_[3] + c];
  }
  float at(std::size_t b, std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return data_[((b * shape_[1] + y) * shape_[2] + x) * shape_[3] + c];
  }

  /// Same buffer, new shape of identical element count.
  Tensor reshaped(Shape shape) const;
  void fill(float value) noexcept;

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;

  /// Bitwise comparison of shape and payload.
  friend bool operator==(const Tensor& a, const Tensor& b) noexcept;

 private:
  Shape shape_;
  std::vector<float> data_;
};

Tensor gaussian_init(const Shape& shape, float mean, float stddev, std::uint64_t seed);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, float factor);
Tensor add_scalar(const Tensor& t, float value);
Tensor clip(const Tensor& t, float lo, float hi);
Tensor map(const Tensor& t, const std::function<float(float)>& f);

// Reductions accumulate in double.
double sum(const Tensor& t);
double mean(const Tensor& t);
float max_value(const Tensor& t);
float min_value(const Tensor& t);

/// In-place a += b.
void accumulate(Tensor& a, const Tensor& b);

/// Copies batch item `index` of a rank-4 tensor into a [1,H,W,C] tensor.
Tensor batch_item(const Tensor& batch, std::size_t index);
/// Stacks rank-3 [H,W,C] tensors into [N,H,W,C].
Tensor stack(std::span<const Tensor> items);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace odseg
