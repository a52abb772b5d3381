#include "doctest.h"
#include "odseg/errors.hpp"
#include "odseg/gradcheck.hpp"
#include "odseg/layers.hpp"

using namespace odseg;

namespace {

ConvParams conv3(std::size_t cin, std::size_t cout) {
  return {Tensor::zeros({3, 3, cin, cout}), Tensor::zeros({cout})};
}

}  // namespace

TEST_CASE("hand convolution") {
  ConvParams p = conv3(1, 1);
  p.kernels.fill(1.0f);
  const Tensor out = conv2d_forward(Tensor::ones({1, 3, 3, 1}), p);
  CHECK(out.at(0, 1, 1, 0) == 9.0f);
  CHECK(out.at(0, 0, 0, 0) == 4.0f);
  CHECK(out.at(0, 0, 1, 0) == 6.0f);
}

TEST_CASE("identity kernel and bias-only kernel") {
  ConvParams id = conv3(1, 1);
  id.kernels.at(1, 1, 0, 0) = 1.0f;
  const Tensor x({1, 1, 1, 1}, {2.5f});
  CHECK(conv2d_forward(x, id) == x);

  ConvParams bias = conv3(2, 3);
  bias.biases = Tensor::full({3}, 0.25f);
  const Tensor out = conv2d_forward(gaussian_init({1, 4, 4, 2}, 0.0f, 1.0f, 1), bias);
  for (float v : out.values()) CHECK(v == 0.25f);
}

TEST_CASE("conv rejects channel mismatch and zero upstream gives zero gradients") {
  const ConvParams p{gaussian_init({3, 3, 2, 2}, 0.0f, 1.0f, 3), gaussian_init({2}, 0.0f, 1.0f, 4)};
  CHECK_THROWS_AS(conv2d_forward(Tensor::ones({1, 4, 4, 3}), p), ShapeError);
  ConvCache cache;
  const Tensor out = conv2d_forward(gaussian_init({1, 4, 4, 2}, 0.0f, 1.0f, 5), p, &cache);
  const ConvGrads g = conv2d_backward(cache, p, Tensor::zeros(out.shape()));
  for (const Tensor* t : {&g.input, &g.kernels, &g.biases}) {
    for (float v : t->values()) CHECK(v == 0.0f);
  }
  CHECK_THROWS_AS(conv2d_backward(cache, p, Tensor::zeros({1, 4, 4, 3})), ShapeError);
}

TEST_CASE("maxpool picks the maximum and routes the gradient to it") {
  PoolCache cache;
  const Tensor out = maxpool2_forward(Tensor({1, 2, 2, 1}, {1, 2, 3, 4}), &cache);
  CHECK(out.size() == 1);
  CHECK(out[0] == 4.0f);
  const Tensor g = maxpool2_backward(cache, Tensor::ones({1, 1, 1, 1}));
  CHECK(g == Tensor({1, 2, 2, 1}, {0, 0, 0, 1}));
  CHECK_THROWS_AS(maxpool2_forward(Tensor::ones({1, 3, 2, 1})), ShapeError);
}

TEST_CASE("maxpool ties go to the first element in scan order") {
  PoolCache cache;
  maxpool2_forward(Tensor({1, 2, 2, 1}, {5, 5, 5, 5}), &cache);
  const Tensor g = maxpool2_backward(cache, Tensor::ones({1, 1, 1, 1}));
  CHECK(g == Tensor({1, 2, 2, 1}, {1, 0, 0, 0}));
}

TEST_CASE("upsample replicates and its backward sums blocks") {
  CHECK(upsample2_forward(Tensor({1, 1, 1, 1}, {1})) == Tensor::ones({1, 2, 2, 1}));
  CHECK(upsample2_backward(Tensor::ones({1, 2, 2, 1})) == Tensor({1, 1, 1, 1}, {4}));
}

TEST_CASE("concat and split") {
  const Tensor a = gaussian_init({2, 4, 4, 2}, 0.0f, 1.0f, 1);
  const Tensor b = gaussian_init({2, 4, 4, 3}, 0.0f, 1.0f, 2);
  const Tensor c = concat_channels(a, b);
  CHECK(c.shape() == Shape{2, 4, 4, 5});
  const auto [x, y] = split_channels(c, 2);
  CHECK(x == a);
  CHECK(y == b);
  CHECK_THROWS_AS(concat_channels(a, Tensor::ones({2, 2, 2, 3})), ShapeError);
}

TEST_CASE("relu and sigmoid") {
  CHECK(relu_forward(Tensor({3}, {-2, 0, 3})) == Tensor({3}, {0, 0, 3}));
  CHECK(relu_backward(Tensor({3}, {-2, 0, 3}), Tensor::ones({3})) == Tensor({3}, {0, 0, 1}));
  const Tensor s = sigmoid_forward(Tensor({3}, {-100.0f, 0.0f, 100.0f}));
  CHECK(s[0] > 0.0f);
  CHECK(s[1] == doctest::Approx(0.5));
  CHECK(s[2] < 1.0f);
}

TEST_CASE("layer gradient checks") {
  CHECK(check_conv(1, 20).passed);
  CHECK(check_pool(1, 20).passed);
  CHECK(check_upsample(1, 20).passed);
  CHECK(check_concat(1, 20).passed);
  CHECK(check_relu(1, 20).passed);
  CHECK(check_sigmoid(1, 20).passed);
}
