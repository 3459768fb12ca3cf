#include <doctest.h>

#include <cmath>
#include <random>

#include "deeplung/dpn.hpp"
#include "deeplung/errors.hpp"
#include "deeplung/ops.hpp"
#include "support/gradcheck.hpp"

using namespace deeplung;

namespace {

double norm_of(std::span<const double> v, std::size_t begin, std::size_t end) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("block shape arithmetic") {
  auto s = DualPathBlockSpec::make(64, 16, 32);
  CHECK(s.out_channels() == 80);
  CHECK(s.residual_width == 48);
  DualPathBlockSpec bad = s;
  bad.residual_width = 10;
  CHECK_THROWS_AS(bad.validate(), SpecError);
  CHECK_THROWS_AS(DualPathBlockSpec::make(8, -1, 4), SpecError);
}

TEST_CASE("in_channels 64 with d=16 emits 80 channels") {
  std::mt19937_64 rng(1);
  DualPathBlock block(DualPathBlockSpec::make(64, 16, 8), rng);
  Tensor x = Tensor::randn({1, 64, 3, 3, 3}, rng);
  CHECK(block(x, true).dim(1) == 80);
}

TEST_CASE("d=0 is a pure residual block") {
  std::mt19937_64 rng(2);
  DualPathBlock block(DualPathBlockSpec::make(6, 0, 4), rng);
  Tensor x = Tensor::randn({2, 6, 4, 4, 4}, rng);
  Tensor y = block(x, true);
  CHECK(y.shape() == x.shape());
  Tensor expected = relu(add(block.residual_function(x, true), x));
  for (Index i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("zero F with identity G keeps the input as an exact sub-slice") {
  std::mt19937_64 rng(3);
  for (Index d : {0, 1, 3, 5}) {
    DualPathBlock block(DualPathBlockSpec::make(5, d, 4), rng);
    block.zero_residual_function();
    block.activation = BlockActivation::kIdentity;
    Tensor x = Tensor::randn({2, 5, 3, 4, 3}, rng);
    for (bool training : {true, false}) {
      Tensor y = block(x, training);
      REQUIRE(y.dim(1) == 5 + d);
      // y = [x[:d], 0_d, x[d:]]
      Tensor head = slice_channels(y, 0, d);
      Tensor zeros = slice_channels(y, d, 2 * d);
      Tensor tail = slice_channels(y, 2 * d, 5 + d);
      Tensor xh = slice_channels(x, 0, d), xt = slice_channels(x, d, 5);
      for (Index i = 0; i < head.numel(); ++i) CHECK(head[i] == xh[i]);
      for (Index i = 0; i < zeros.numel(); ++i) CHECK(zeros[i] == 0.0);
      for (Index i = 0; i < tail.numel(); ++i) CHECK(tail[i] == xt[i]);
    }
  }
}

TEST_CASE("channel growth equals d for random specs") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<Index> cd(1, 12), dd(0, 6);
  for (int trial = 0; trial < 20; ++trial) {
    const Index d = dd(rng);
    const Index c = d + cd(rng);
    const int stride = trial % 3 == 0 ? 2 : 1;
    DualPathBlock block(DualPathBlockSpec::make(c, d, 3, stride), rng);
    Tensor x = Tensor::randn({1, c, 4, 4, 4}, rng);
    Tensor y = block(x, true);
    CHECK(y.dim(1) - x.dim(1) == d);
    CHECK(y.dim(2) == 4 / stride);
  }
}

TEST_CASE("combine rejects mismatched F width") {
  Tensor x(Shape{1, 4, 2, 2, 2}), fx(Shape{1, 5, 2, 2, 2});
  CHECK_THROWS_AS(dual_path_combine(x, fx, 2), SpecError);
}

TEST_CASE("wrong input width throws SpecError") {
  std::mt19937_64 rng(5);
  DualPathBlock block(DualPathBlockSpec::make(8, 2, 4), rng);
  CHECK_THROWS_AS(block(Tensor(Shape{1, 6, 2, 2, 2}), true), SpecError);
}

TEST_CASE("gradient reaches both the dense and the residual path") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = Tensor::randn({1, 6, 3, 3, 3}, rng).set_requires_grad(true);
    Tensor fx = Tensor::randn({1, 6, 3, 3, 3}, rng).set_requires_grad(true);
    testing::weighted_sum(relu(dual_path_combine(x, fx, 2)), 1000 + trial).backward();
    const std::size_t plane = 27;
    CHECK(norm_of(fx.grad(), 0, 2 * plane) > 0.0);          // dense part F[:d]
    CHECK(norm_of(fx.grad(), 2 * plane, 6 * plane) > 0.0);  // residual part F[d:]
    CHECK(norm_of(x.grad(), 0, 2 * plane) > 0.0);
    CHECK(norm_of(x.grad(), 2 * plane, 6 * plane) > 0.0);
  }
}

TEST_CASE("gradcheck dual path block") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const int stride = trial % 2 == 0 ? 1 : 2;
    const Index c = 3 + trial % 3;
    DualPathBlock block(DualPathBlockSpec::make(c, trial % 3, 2, stride), rng);
    Tensor x = Tensor::randn({2, c, 3, 3, 3}, rng);
    TensorRegistry reg;
    block.register_tensors(reg, "b");
    std::vector<Tensor> inputs{x};
    for (const Tensor& p : reg.trainable()) inputs.push_back(p);
    auto r = testing::grad_check(
        [&block](const std::vector<Tensor>& in) { return testing::weighted_sum(block(in[0], true)); },
        inputs);
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("stacks") {
  std::mt19937_64 rng(8);
  SUBCASE("8 blocks with d=16 from 64 channels reach 192") {
    auto stack = build_dpn_stack(8, DualPathBlockSpec::make(64, 16, 8), {2}, rng);
    CHECK(stack.out_channels() == 192);
    for (std::size_t i = 0; i < stack.blocks.size(); ++i) {
      CHECK(stack.blocks[i].spec().in_channels == 64 + static_cast<Index>(i) * 16);
    }
    CHECK(stack.total_stride() == 2);
  }
  SUBCASE("a single-block stack matches the block") {
    std::mt19937_64 r1(9), r2(9);
    auto spec = DualPathBlockSpec::make(4, 2, 3);
    auto stack = build_dpn_stack(1, spec, {}, r1);
    DualPathBlock block(spec, r2);
    Tensor x = Tensor::randn({1, 4, 3, 3, 3}, rng);
    Tensor a = stack(x, false), b = block(x, false);
    for (Index i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
  }
  CHECK_THROWS_AS(build_dpn_stack(0, DualPathBlockSpec::make(4, 2, 3), {}, rng), SpecError);
}
