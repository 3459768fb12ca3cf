#include <doctest.h>

#include <cmath>

#include "deeplung/errors.hpp"
#include "deeplung/ops.hpp"

using namespace deeplung;

TEST_CASE("sum backward gives ones") {
  Tensor x(Shape{2, 3}, 0.7, true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("sum of squares at 3 has gradient 6") {
  Tensor x(Shape{1}, 3.0, true);
  sum(mul(x, x)).backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("second backward doubles leaf gradients") {
  Tensor x(Shape{4}, 2.0, true);
  Tensor y = relu(scale(x, 1.5));  // non-leaf in the middle
  Tensor loss = sum(y);
  loss.backward();
  loss.backward();
  for (double g : x.grad()) CHECK(g == doctest::Approx(3.0));
}

TEST_CASE("backward on non-scalar is a usage error") {
  Tensor x(Shape{3}, 1.0, true);
  CHECK_THROWS_AS(scale(x, 2.0).backward(), UsageError);
}

TEST_CASE("no-grad guard suppresses graph recording") {
  Tensor x(Shape{3}, 1.0, true);
  NoGradGuard guard;
  Tensor y = scale(x, 2.0);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.is_leaf());
}

TEST_CASE("shape mismatch is a dimension error") {
  CHECK_THROWS_AS(add(Tensor(Shape{2}), Tensor(Shape{3})), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST_CASE("activation values") {
  CHECK(relu(-1.5) == 0.0);
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-2.0) == doctest::Approx(0.119203).epsilon(1e-6));
  // Strictly inside (0, 1) for moderate logits.
  for (double z : {-30.0, -5.0, 5.0, 30.0}) {
    CHECK(sigmoid(z) > 0.0);
    CHECK(sigmoid(z) < 1.0);
  }
}

TEST_CASE("bce values") {
  CHECK(bce_with_logits(50.0, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(bce_with_logits(0.0, 1.0) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(bce_with_logits(-2.0, 1.0) == doctest::Approx(2.126928).epsilon(1e-6));
  for (double z : {-500.0, -50.0, 50.0, 500.0}) {
    CHECK(std::isfinite(bce_with_logits(z, 0.0)));
    CHECK(std::isfinite(bce_with_logits(z, 1.0)));
  }
}

TEST_CASE("smooth l1 values") {
  CHECK(smooth_l1(0.0, 0.0) == 0.0);
  CHECK(smooth_l1(0.5, 0.0) == 0.125);
  CHECK(smooth_l1(2.0, 0.0) == 1.5);
  Tensor pred(Shape{4}, std::vector<double>{0.5, 0.0, 0.0, 0.0});
  const std::vector<double> target{0, 0, 0, 0};
  CHECK(smooth_l1(pred, target).item() == 0.125);
}

TEST_CASE("concat and slice are inverse on channels") {
  std::mt19937_64 rng(1);
  Tensor a = Tensor::randn({2, 3, 2, 2, 2}, rng);
  Tensor b = Tensor::randn({2, 4, 2, 2, 2}, rng);
  Tensor c = concat_channels({a, b});
  CHECK(c.dim(1) == 7);
  Tensor back = slice_channels(c, 3, 7);
  for (Index i = 0; i < b.numel(); ++i) CHECK(back[i] == b[i]);
  CHECK_THROWS_AS(slice_channels(c, 3, 8), DimensionError);
}

TEST_CASE("dropout") {
  std::mt19937_64 rng(5);
  Tensor x(Shape{1000}, 2.0);
  SUBCASE("rate zero is identity") {
    Tensor y = dropout(x, 0.0, true, rng);
    for (Index i = 0; i < x.numel(); ++i) CHECK(y[i] == 2.0);
  }
  SUBCASE("eval mode is identity") {
    Tensor y = dropout(x, 0.5, false, rng);
    for (Index i = 0; i < x.numel(); ++i) CHECK(y[i] == 2.0);
  }
  SUBCASE("mean preserved within 5% over 1e6 elements") {
    Tensor big(Shape{1000000}, 1.0);
    std::mt19937_64 r(42);
    const double m = mean(dropout(big, 0.5, true, r)).item();
    CHECK(std::abs(m - 1.0) < 0.05);
  }
  CHECK_THROWS_AS(dropout(x, 1.0, true, rng), DomainError);
}
