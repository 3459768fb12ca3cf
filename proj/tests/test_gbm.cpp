#include <doctest.h>

#include <cmath>
#include <random>

#include "deeplung/errors.hpp"
#include "deeplung/gbm.hpp"
#include "deeplung/ops.hpp"

using namespace deeplung;

namespace {

struct Dataset {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
};

Dataset random_dataset(std::mt19937_64& rng, int n, int f) {
  Dataset d;
  std::normal_distribution<double> g(0, 1);
  for (int i = 0; i < n; ++i) {
    std::vector<double> row(static_cast<std::size_t>(f));
    for (auto& v : row) v = g(rng);
    d.y.push_back(row[0] + 0.5 * row[1] + 0.7 * g(rng) > 0 ? 1 : 0);
    d.x.push_back(std::move(row));
  }
  d.y[0] = 1;
  d.y[1] = 0;
  return d;
}

int correct(const GbmModel& m, const Dataset& d) {
  int ok = 0;
  for (std::size_t i = 0; i < d.x.size(); ++i) ok += (gbm_predict(m, d.x[i]) > 0.5) == (d.y[i] == 1);
  return ok;
}

}  // namespace

TEST_CASE("feature layout") {
  std::vector<double> deep(2560, 0.0);
  NoduleCrop crop;
  crop.voxels = Volume(16, 16, 16, 0.0);
  auto f = assemble_features(deep, 0.0, crop);
  CHECK(f.size() == 6657);
  for (double v : f) CHECK(v == 0);
  deep[2559] = 1;
  crop.voxels.voxels[0] = 2;
  f = assemble_features(deep, 7.5, crop);
  CHECK(f[2559] == 1);
  CHECK(f[2560] == 7.5);
  CHECK(f[2561] == 2);
  CHECK_THROWS_AS(assemble_features(std::vector<double>(2559), 1, crop), DimensionError);
  crop.voxels = Volume(32, 32, 32);
  CHECK_THROWS_AS(assemble_features(deep, 1, crop), DimensionError);
}

TEST_CASE("prior log-odds") {
  GbmParams p;
  p.n_trees = 0;
  const GbmModel m = gbm_fit({{0}, {1}, {2}, {3}}, {1, 1, 1, 0}, p);
  CHECK(m.initial == doctest::Approx(std::log(3.0)));
  CHECK(gbm_predict(m, std::vector<double>{5}) == doctest::Approx(0.75));
  const GbmModel b = gbm_fit({{0}, {1}}, {1, 0}, p);
  CHECK(gbm_predict(b, std::vector<double>{0}) == 0.5);
}

TEST_CASE("1-D separable data within 10 trees") {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (int i = -10; i <= 10; ++i) {
    if (i == 0) continue;
    x.push_back({i * 0.3});
    y.push_back(i > 0);
  }
  GbmParams p;
  p.n_trees = 10;
  const GbmModel m = gbm_fit(x, y, p);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK((gbm_predict(m, x[i]) > 0.5) == (y[i] == 1));
}

TEST_CASE("zero shrinkage keeps the prior") {
  std::mt19937_64 rng(1);
  Dataset d = random_dataset(rng, 30, 3);
  GbmParams p;
  p.shrinkage = 0;
  p.n_trees = 5;
  const GbmModel m = gbm_fit(d.x, d.y, p);
  for (const auto& row : d.x) CHECK(gbm_predict(m, row) == sigmoid(m.initial));
}

TEST_CASE("hand-walked two-tree model") {
  GbmModel m;
  m.n_features = 2;
  m.initial = 0.5;
  m.shrinkage = 0.1;
  GbmTree t1;
  t1.nodes = {{0, 1.0, 1, 2, 0}, {-1, 0, -1, -1, 2.0}, {-1, 0, -1, -1, -3.0}};
  GbmTree t2;
  t2.nodes = {{1, 0.0, 1, 2, 0}, {-1, 0, -1, -1, -1.0}, {-1, 0, -1, -1, 4.0}};
  m.trees = {t1, t2};
  // x = (0.5, 2): t1 -> left (2.0), t2 -> right (4.0); 0.5 + 0.1 * 6 = 1.1
  CHECK(gbm_predict(m, std::vector<double>{0.5, 2}) == doctest::Approx(sigmoid(1.1)));
  // x = (1.0, -1): threshold is strict, so t1 -> right (-3.0), t2 -> left (-1.0); 0.5 - 0.4 = 0.1
  CHECK(gbm_predict(m, std::vector<double>{1.0, -1}) == doctest::Approx(sigmoid(0.1)));
  CHECK_THROWS_AS(gbm_predict(m, std::vector<double>{1.0}), DimensionError);
}

TEST_CASE("training loss never increases") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    Dataset d = random_dataset(rng, 40, 5);
    GbmParams p;
    p.n_trees = 60;
    p.max_depth = 1 + trial % 4;
    const GbmModel m = gbm_fit(d.x, d.y, p);
    REQUIRE(m.loss_history.size() == 60);
    for (std::size_t i = 1; i < m.loss_history.size(); ++i) CHECK(m.loss_history[i] <= m.loss_history[i - 1]);
    for (const auto& t : m.trees) CHECK(t.depth() <= p.max_depth);
    CHECK(m.loss_history.back() == doctest::Approx(gbm_loss(m, d.x, d.y)));
  }
}

TEST_CASE("invariant under monotone column transforms") {
  std::mt19937_64 rng(3);
  Dataset d = random_dataset(rng, 40, 4);
  Dataset t = d;
  for (auto& row : t.x) {
    row[0] = std::exp(row[0]);
    row[2] = 2 * row[2] * row[2] * row[2] + row[2];
  }
  GbmParams p;
  p.n_trees = 30;
  p.seed = 5;
  const GbmModel a = gbm_fit(d.x, d.y, p);
  const GbmModel b = gbm_fit(t.x, t.y, p);
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    CHECK((gbm_predict(a, d.x[i]) > 0.5) == (gbm_predict(b, t.x[i]) > 0.5));
    CHECK(gbm_predict(a, d.x[i]) == doctest::Approx(gbm_predict(b, t.x[i])).epsilon(1e-12));
  }
}

TEST_CASE("seeded fits serialize identically") {
  std::mt19937_64 rng(4);
  Dataset d = random_dataset(rng, 30, 6);
  GbmParams p;
  p.n_trees = 20;
  p.subsample = 0.7;
  p.seed = 9;
  const std::string a = serialize_gbm(gbm_fit(d.x, d.y, p));
  const std::string b = serialize_gbm(gbm_fit(d.x, d.y, p));
  CHECK(a == b);
  CHECK(a.substr(0, 4) == "GBM1");
  const GbmModel m = deserialize_gbm(a);
  const GbmModel orig = gbm_fit(d.x, d.y, p);
  for (const auto& row : d.x) CHECK(gbm_predict(m, row) == gbm_predict(orig, row));
  CHECK_THROWS_AS(deserialize_gbm("GBM2" + a.substr(4)), ParseError);
  CHECK_THROWS_AS(deserialize_gbm(a.substr(0, a.size() - 3)), ParseError);
}

TEST_CASE("constant features give zero stumps") {
  const GbmModel m = gbm_fit({{1, 2}, {1, 2}, {1, 2}}, {1, 0, 1});
  for (const auto& t : m.trees) {
    CHECK(t.nodes.size() == 1);
    CHECK(t.nodes[0].value == 0);
  }
  CHECK(gbm_predict(m, std::vector<double>{1, 2}) == doctest::Approx(2.0 / 3));
}

TEST_CASE("fit preconditions") {
  CHECK_THROWS_AS(gbm_fit({{0}, {1}}, {1, 1}), UsageError);
  CHECK_THROWS_AS(gbm_fit({{0}, {1}}, {1}), DimensionError);
  CHECK_THROWS_AS(gbm_fit({{0}, {1, 2}}, {1, 0}), DimensionError);
}

TEST_CASE("overfits a noisy training set") {
  std::mt19937_64 rng(5);
  Dataset d = random_dataset(rng, 40, 8);
  const GbmModel m = gbm_fit(d.x, d.y);
  CHECK(correct(m, d) == 40);
}
