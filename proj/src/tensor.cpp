#include "odseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "odseg/errors.hpp"
#include "odseg/rng.hpp"

namespace odseg {

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimension must be >= 1, got " + shape_to_string(shape));
  }
}

template <typename Op>
Tensor binary(const Tensor& a, const Tensor& b, const char* what, Op op) {
  require_same_shape(a, b, what);
  Tensor out(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = op(pa[i], pb[i]);
  return out;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
  validate_shape(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("axis out of range");
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
  validate_shape(shape);
  if (shape_size(shape) != size()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

void Tensor::fill(float value) noexcept { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool operator==(const Tensor& a, const Tensor& b) noexcept {
  return a.shape_ == b.shape_ &&
         (a.data_.empty() || std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0);
}

Tensor gaussian_init(const Shape& shape, float mean, float stddev, std::uint64_t seed) {
  if (!(stddev > 0.0f)) throw ParameterError("gaussian_init: stddev must be > 0");
  Tensor out(shape);
  CounterRng rng(seed);
  for (float& v : out.values()) v = static_cast<float>(mean + stddev * rng.normal());
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, "add", [](float x, float y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, "sub", [](float x, float y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, "mul", [](float x, float y) { return x * y; });
}

Tensor scale(const Tensor& t, float factor) {
  Tensor out(t);
  for (float& v : out.values()) v *= factor;
  return out;
}

Tensor add_scalar(const Tensor& t, float value) {
  Tensor out(t);
  for (float& v : out.values()) v += value;
  return out;
}

Tensor clip(const Tensor& t, float lo, float hi) {
  if (lo > hi) throw ParameterError("clip: lo > hi");
  Tensor out(t);
  for (float& v : out.values()) v = std::clamp(v, lo, hi);
  return out;
}

Tensor map(const Tensor& t, const std::function<float(float)>& f) {
  Tensor out(t);
  for (float& v : out.values()) v = f(v);
  return out;
}

double sum(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.values()) acc += v;
  return acc;
}

double mean(const Tensor& t) {
  if (t.empty()) throw ParameterError("mean of empty tensor");
  return sum(t) / static_cast<double>(t.size());
}

float max_value(const Tensor& t) {
  if (t.empty()) throw ParameterError("max of empty tensor");
  return *std::max_element(t.values().begin(), t.values().end());
}

float min_value(const Tensor& t) {
  if (t.empty()) throw ParameterError("min of empty tensor");
  return *std::min_element(t.values().begin(), t.values().end());
}

void accumulate(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "accumulate");
  float* pa = a.data();
  const float* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

Tensor batch_item(const Tensor& batch, std::size_t index) {
  if (batch.rank() != 4) throw ShapeError("batch_item expects a rank-4 tensor");
  if (index >= batch.dim(0)) throw ShapeError("batch index out of range");
  const std::size_t per = batch.size() / batch.dim(0);
  std::vector<float> values(batch.data() + index * per, batch.data() + (index + 1) * per);
  return Tensor({1, batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(values));
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack of zero tensors");
  const Shape& first = items.front().shape();
  if (first.size() != 3) throw ShapeError("stack expects rank-3 [H,W,C] tensors");
  Shape shape{items.size(), first[0], first[1], first[2]};
  std::vector<float> values;
  values.reserve(shape_size(shape));
  for (const Tensor& t : items) {
    if (t.shape() != first) throw ShapeError("stack: inconsistent item shapes");
    values.insert(values.end(), t.values().begin(), t.values().end());
  }
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace odseg
