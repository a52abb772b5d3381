#include <cmath>

#include "doctest.h"
#include "odseg/errors.hpp"
#include "odseg/gradcheck.hpp"
#include "odseg/loss.hpp"

using namespace odseg;

TEST_CASE("bce values") {
  const Tensor y({2}, {1, 0});
  const Tensor half({2}, {0.5f, 0.5f});
  CHECK(bce_loss(PixelPartition(y, half)) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  const Tensor perfect({2}, {1.0f - 1e-7f, 1e-7f});
  CHECK(bce_loss(PixelPartition(y, perfect)) < 2e-7);
  const Tensor empty_like = Tensor::zeros({1});
  CHECK_THROWS_AS(PixelPartition(Tensor({2}, {1, 0}), Tensor({3}, {0, 0, 0})), ShapeError);
  CHECK_THROWS_AS(PixelPartition(Tensor({1}, {0.5f}), empty_like), ParameterError);
  CHECK_THROWS_AS(PixelPartition(Tensor({1}, {1}), Tensor({1}, {1.5f})), ParameterError);
}

TEST_CASE("jaccard values") {
  const Tensor y({4}, {1, 1, 0, 0});
  CHECK(jaccard_loss(PixelPartition(y, Tensor({4}, {0.8f, 0.6f, 0.1f, 0.3f}))) ==
        doctest::Approx(1.0 - 1.4 / 2.4).epsilon(1e-6));
  CHECK(jaccard_loss(PixelPartition(y, y)) == 0.0);
  CHECK(jaccard_loss(PixelPartition(y, Tensor::zeros({4}))) == 1.0);
}

TEST_CASE("jaccard degenerate labels") {
  const Tensor y = Tensor::zeros({4});
  const Tensor p({4}, {0.1f, 0.2f, 0.3f, 0.4f});
  CHECK_THROWS_AS(jaccard_loss(PixelPartition(y, p)), DegenerateLabelError);
  CHECK_THROWS_AS(jaccard_grad(PixelPartition(y, p)), DegenerateLabelError);
  CHECK(jaccard_loss(PixelPartition(y, p), DegenerateLabels::kSmooth) == doctest::Approx(1.0 / 2.0));
  CHECK(jaccard_loss(PixelPartition(y, Tensor::zeros({4})), DegenerateLabels::kSmooth) == 0.0);
}

TEST_CASE("jaccard gradient closed form") {
  // D = |Y_d| + S_b = 2.4, S_d = 1.4.
  const Tensor y({4}, {1, 1, 0, 0});
  const Tensor g = jaccard_grad(PixelPartition(y, Tensor({4}, {0.8f, 0.6f, 0.1f, 0.3f})));
  CHECK(g[0] == doctest::Approx(-1.0 / 2.4).epsilon(1e-6));
  CHECK(g[1] == doctest::Approx(-1.0 / 2.4).epsilon(1e-6));
  CHECK(g[2] == doctest::Approx(1.4 / (2.4 * 2.4)).epsilon(1e-6));
}

TEST_CASE("combined loss") {
  const Tensor y({4}, {1, 1, 0, 0});
  const Tensor p({4}, {0.8f, 0.6f, 0.1f, 0.3f});
  const PixelPartition part(y, p);
  CHECK(combined_loss(part) == doctest::Approx(bce_loss(part) + jaccard_loss(part)));
  const Tensor perfect({4}, {1.0f - 1e-7f, 1.0f - 1e-7f, 1e-7f, 1e-7f});
  CHECK(combined_loss(PixelPartition(y, perfect)) <= 1e-6);
  CHECK(parse_loss_kind("bce") == LossKind::kBce);
  CHECK(to_string(LossKind::kCombined) == "combined");
  CHECK_THROWS_AS(parse_loss_kind("dice"), ParameterError);
}

TEST_CASE("jaccard on binary predictions equals the set distance on every mask up to 3x3") {
  for (std::size_t n = 1; n <= 9; ++n) {
    const std::size_t combos = std::size_t{1} << n;
    for (std::size_t ym = 1; ym < combos; ++ym) {
      for (std::size_t pm = 0; pm < combos; ++pm) {
        Tensor y({n}), p({n});
        std::size_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const bool a = (ym >> i) & 1, b = (pm >> i) & 1;
          y[i] = a;
          p[i] = b;
          inter += a && b;
          uni += a || b;
        }
        const double expected = 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
        const double got = jaccard_loss(PixelPartition(y, p));
        if (std::abs(got - expected) > 1e-6) FAIL("n=" << n << " y=" << ym << " p=" << pm);
      }
    }
  }
}

TEST_CASE("loss gradient checks") {
  CHECK(check_bce(3, 30).passed);
  CHECK(check_jaccard(3, 30).passed);
  CHECK(check_combined(3, 30).passed);
  CHECK_FALSE(check_jaccard(3, 5, true).passed);
}
