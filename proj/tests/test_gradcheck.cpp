#include <doctest.h>

#include <random>

#include "deeplung/conv.hpp"
#include "deeplung/ops.hpp"
#include "support/gradcheck.hpp"

using namespace deeplung;
using testing::grad_check;
using testing::weighted_sum;

namespace {

constexpr double kTol = 1e-4;

// Five small random 5-d shapes, each at most 4^5 elements.
std::vector<Shape> random_shapes(std::mt19937_64& rng, Index min_spatial = 2) {
  std::uniform_int_distribution<Index> batch(1, 2), chan(1, 3), sp(min_spatial, 4);
  std::vector<Shape> shapes;
  while (shapes.size() < 5) {
    Shape s{batch(rng), chan(rng), sp(rng), sp(rng), sp(rng)};
    if (shape_numel(s) <= 1024) shapes.push_back(s);
  }
  return shapes;
}

}  // namespace

TEST_CASE("gradcheck conv3d") {
  std::mt19937_64 rng(100);
  for (const Shape& s : random_shapes(rng, 3)) {
    for (int stride : {1, 2}) {
      Tensor x = Tensor::randn(s, rng);
      Tensor w = Tensor::randn({2, s[1], 3, 3, 3}, rng, 0.5);
      Tensor b = Tensor::randn({2}, rng);
      auto r = grad_check(
          [stride](const std::vector<Tensor>& in) {
            return weighted_sum(conv3d(in[0], in[1], in[2], {stride, 1}));
          },
          {x, w, b});
      CHECK(r.finite);
      CHECK(r.max_rel_error <= kTol);
    }
  }
}

TEST_CASE("gradcheck deconv3d") {
  std::mt19937_64 rng(101);
  for (const Shape& s : random_shapes(rng)) {
    Tensor x = Tensor::randn(s, rng);
    Tensor w = Tensor::randn({s[1], 2, 2, 2, 2}, rng, 0.5);
    Tensor b = Tensor::randn({2}, rng);
    auto r = grad_check(
        [](const std::vector<Tensor>& in) {
          return weighted_sum(deconv3d(in[0], in[1], in[2], {2, 0}));
        },
        {x, w, b});
    CHECK(r.max_rel_error <= kTol);
  }
}

TEST_CASE("gradcheck pools") {
  std::mt19937_64 rng(102);
  for (const Shape& s : random_shapes(rng)) {
    Tensor x = Tensor::randn(s, rng);
    auto rmax = grad_check(
        [](const std::vector<Tensor>& in) { return weighted_sum(max_pool3d(in[0], 2, 1)); }, {x});
    auto ravg = grad_check(
        [](const std::vector<Tensor>& in) { return weighted_sum(avg_pool3d(in[0], 2, 2)); }, {x});
    auto rgap = grad_check(
        [](const std::vector<Tensor>& in) { return weighted_sum(global_avg_pool3d(in[0])); }, {x});
    CHECK(rmax.max_rel_error <= kTol);
    CHECK(ravg.max_rel_error <= kTol);
    CHECK(rgap.max_rel_error <= kTol);
  }
}

TEST_CASE("gradcheck activations") {
  std::mt19937_64 rng(103);
  for (const Shape& s : random_shapes(rng)) {
    Tensor x = Tensor::randn(s, rng);
    auto rr = grad_check([](const std::vector<Tensor>& in) { return weighted_sum(relu(in[0])); }, {x});
    auto rs = grad_check([](const std::vector<Tensor>& in) { return weighted_sum(sigmoid(in[0])); }, {x});
    CHECK(rr.max_rel_error <= kTol);
    CHECK(rs.max_rel_error <= kTol);
  }
}

TEST_CASE("gradcheck batch norm") {
  std::mt19937_64 rng(104);
  for (const Shape& s : random_shapes(rng)) {
    const Index c = s[1];
    Tensor x = Tensor::randn(s, rng);
    Tensor gamma = Tensor::uniform({c}, rng, 0.5, 1.5);
    Tensor beta = Tensor::randn({c}, rng);
    for (bool training : {true, false}) {
      auto r = grad_check(
          [c, training](const std::vector<Tensor>& in) {
            std::vector<double> rm(c, 0.1), rv(c, 0.8);
            return weighted_sum(batch_norm3d(in[0], in[1], in[2], {rm, rv}, training));
          },
          {x, gamma, beta});
      CHECK(r.max_rel_error <= kTol);
    }
  }
}

TEST_CASE("gradcheck dropout with a fixed mask") {
  std::mt19937_64 rng(105);
  for (const Shape& s : random_shapes(rng)) {
    Tensor x = Tensor::randn(s, rng);
    auto r = grad_check(
        [](const std::vector<Tensor>& in) {
          std::mt19937_64 mask_rng(7);
          return weighted_sum(dropout(in[0], 0.5, true, mask_rng));
        },
        {x});
    CHECK(r.max_rel_error <= kTol);
  }
}

TEST_CASE("gradcheck losses") {
  std::mt19937_64 rng(106);
  for (int trial = 0; trial < 5; ++trial) {
    const Index n = 3 + trial * 4;
    Tensor z = Tensor::randn({n}, rng, 3.0);
    std::vector<double> labels(n), targets(n);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> nd(0.0, 2.0);
    for (Index i = 0; i < n; ++i) {
      labels[i] = coin(rng) ? 1.0 : 0.0;
      targets[i] = nd(rng);
    }
    auto rb = grad_check([&](const std::vector<Tensor>& in) { return bce_with_logits(in[0], labels); }, {z});
    auto rl = grad_check([&](const std::vector<Tensor>& in) { return smooth_l1(in[0], targets); }, {z});
    CHECK(rb.max_rel_error <= kTol);
    CHECK(rl.max_rel_error <= kTol);
  }
}

TEST_CASE("gradcheck structural ops and linear") {
  std::mt19937_64 rng(107);
  for (const Shape& s : random_shapes(rng)) {
    Tensor a = Tensor::randn(s, rng);
    Shape sb = s;
    sb[1] = 2;
    Tensor b = Tensor::randn(sb, rng);
    auto rc = grad_check(
        [](const std::vector<Tensor>& in) {
          Tensor c = concat_channels({in[0], in[1]});
          return weighted_sum(add(slice_channels(c, 1, c.dim(1)), slice_channels(c, 0, c.dim(1) - 1)));
        },
        {a, b});
    CHECK(rc.max_rel_error <= kTol);

    Tensor x = Tensor::randn({s[0], 5}, rng);
    Tensor w = Tensor::randn({3, 5}, rng);
    Tensor bias = Tensor::randn({3}, rng);
    auto rlin = grad_check(
        [](const std::vector<Tensor>& in) { return weighted_sum(linear(in[0], in[1], in[2])); },
        {x, w, bias});
    CHECK(rlin.max_rel_error <= kTol);
  }
}
