#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include <unistd.h>

#include "deeplung/classifier.hpp"
#include "deeplung/errors.hpp"
#include "deeplung/ops.hpp"
#include "support/gradcheck.hpp"

using namespace deeplung;

namespace {

ClassifierConfig tiny() {
  ClassifierConfig c;
  c.input_extent = 16;
  c.stem_width = 4;
  c.dense_increment = 2;
  c.stage_blocks = {1, 1, 1, 1};
  c.stage_bottleneck = {2, 2, 2, 2};
  c.expected_feature_dim = 12;
  c.epochs = 2;
  c.batch_size = 2;
  return c;
}

Volume ramp(Index e) {
  Volume v(e, e, e);
  for (Index z = 0; z < e; ++z)
    for (Index y = 0; y < e; ++y)
      for (Index x = 0; x < e; ++x) v.at(z, y, x) = 10000.0 * z + 100.0 * y + x;
  return v;
}

std::vector<NoduleCrop> random_crops(int n, Index e, std::mt19937_64& rng) {
  std::vector<NoduleCrop> out;
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < n; ++i) {
    NoduleCrop c;
    c.voxels = Volume(e, e, e);
    for (auto& v : c.voxels.voxels) v = u(rng) + (i % 2) * 0.5;
    c.d = 5 + i;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

TEST_CASE("crop inside the volume is an exact sub-volume") {
  Volume v = ramp(64);
  NoduleCrop c = crop_patch(v, {32, 30, 28, 8}, 32);
  CHECK(c.voxels.width == 32);
  for (Index z = 0; z < 32; ++z)
    for (Index y = 0; y < 32; ++y)
      for (Index x = 0; x < 32; ++x) REQUIRE(c.voxels.at(z, y, x) == v.at(z + 12, y + 14, x + 16));
  CHECK(c.voxels.at(16, 16, 16) == v.at(28, 30, 32));
  CHECK(c.d == 8);
}

TEST_CASE("crop near the x=0 face pads 11 planes") {
  Volume v = ramp(64);
  for (auto& x : v.voxels) x += 1;
  NoduleCrop c = crop_patch(v, {5, 32, 32, 8}, 32);
  for (Index x = 0; x < 32; ++x) {
    bool all_zero = true;
    for (Index z = 0; z < 32; ++z)
      for (Index y = 0; y < 32; ++y) all_zero = all_zero && c.voxels.at(z, y, x) == 0;
    CHECK(all_zero == (x < 11));
  }
}

TEST_CASE("crop of a constant volume") {
  Volume v(20, 20, 20, 0.25);
  NoduleCrop c = crop_patch(v, {10, 10, 10, 4}, 16);
  CHECK(c.voxels.voxels.size() == 4096);
  for (double x : c.voxels.voxels) CHECK(x == 0.25);
  CHECK_THROWS_AS(crop_patch(v, {25, 10, 10, 4}, 16), DomainError);
  CHECK_THROWS_AS(crop_patch(v, {-1, 10, 10, 4}, 16), DomainError);
}

TEST_CASE("config arithmetic") {
  CHECK(ClassifierConfig::full().feature_dim() == 2560);
  CHECK(ClassifierConfig::full().total_blocks() == 30);
  CHECK(ClassifierConfig::desk().feature_dim() == 256);
  CHECK(ClassifierConfig::desk().total_blocks() == 10);
  ClassifierConfig bad = ClassifierConfig::full();
  bad.dense_increment = 79;
  CHECK_THROWS_AS(bad.validate(), SpecError);
  CHECK_THROWS_AS(ClassifierNet(bad, 0), SpecError);
  const auto kv = KeyValueConfig::parse(ClassifierConfig::desk().to_text());
  CHECK(ClassifierConfig::from(kv).to_text() == ClassifierConfig::desk().to_text());
}

TEST_CASE("full network emits 2560 features") {
  ClassifierNet net(ClassifierConfig::full(), 0);
  MESSAGE("full classifier parameters: " << net.parameter_count());
  NoGradGuard ng;
  ClassifierOutput o = net.forward(Tensor::zeros({1, 1, 32, 32, 32}), false);
  CHECK(o.features.shape() == Shape{1, 2560});
  CHECK(o.logits.shape() == Shape{1, 1});
}

TEST_CASE("zero input gives the final bias") {
  ClassifierNet net(ClassifierConfig::desk(), 1);
  NoduleCrop zero;
  zero.voxels = Volume(32, 32, 32, 0.0);
  Classification c = classify(zero, net);
  CHECK(c.logit == net.tensors().find("fc.bias")->item());
  CHECK(c.probability == 0.5);
  CHECK(c.feature.size() == 256);
  CHECK_THROWS_AS(net.forward(Tensor::zeros({1, 1, 16, 16, 16}), false), DimensionError);
}

TEST_CASE("probability above one half iff logit positive") {
  std::mt19937_64 rng(2);
  ClassifierNet net(tiny(), 2);
  for (const auto& r : classify_batch(random_crops(8, 16, rng), net)) {
    CHECK((r.probability > 0.5) == (r.logit > 0));
    CHECK(r.probability == doctest::Approx(sigmoid(r.logit)));
  }
}

TEST_CASE("classifier gradcheck on a reduced network") {
  std::mt19937_64 rng(3);
  ClassifierNet net(tiny(), 3);
  Tensor x = Tensor::randn({2, 1, 16, 16, 16}, rng);
  const std::vector<double> y{1, 0};
  const Tensor* fc = net.tensors().find("fc.weight");
  auto res = testing::grad_check(
      [&](const std::vector<Tensor>& in) {
        (void)in;
        return bce_with_logits(net.forward(x, true).logits, y);
      },
      {*fc});
  CHECK(res.max_rel_error <= 1e-4);
  auto res_x = testing::grad_check(
      [&](const std::vector<Tensor>& in) { return bce_with_logits(net.forward(in[0], true).logits, y); },
      {Tensor::randn({2, 1, 16, 16, 16}, rng)});
  CHECK(res_x.max_rel_error <= 1e-4);
}

TEST_CASE("training preconditions and zero epochs") {
  std::mt19937_64 rng(4);
  auto crops = random_crops(4, 16, rng);
  ClassifierConfig cfg = tiny();
  ClassifierNet net(cfg, 4);
  CHECK_THROWS_AS(train_classifier(net, crops, {1, 1, 1, 1}), UsageError);
  CHECK_THROWS_AS(train_classifier(net, crops, {1, 0}), DimensionError);

  cfg.epochs = 0;
  ClassifierNet frozen(cfg, 4);
  std::vector<std::vector<double>> before;
  for (const auto& t : frozen.tensors().items()) before.emplace_back(t.tensor.data().begin(), t.tensor.data().end());
  CHECK(train_classifier(frozen, crops, {1, 0, 1, 0}).empty());
  std::size_t i = 0;
  for (const auto& t : frozen.tensors().items()) {
    CHECK(std::equal(before[i].begin(), before[i].end(), t.tensor.data().begin()));
    ++i;
  }
}

TEST_CASE("stored statistics z-score the training set") {
  std::mt19937_64 rng(5);
  auto crops = random_crops(6, 16, rng);
  ClassifierNet net(tiny(), 5);
  train_classifier(net, crops, {0, 1, 0, 1, 0, 1});
  double s = 0, sq = 0, n = 0;
  for (const auto& c : crops) {
    for (double v : normalize(c.voxels, net.stats).voxels) {
      s += v;
      sq += v * v;
      ++n;
    }
  }
  CHECK(s / n == doctest::Approx(0).scale(1));
  CHECK(std::sqrt(sq / n) == doctest::Approx(1));
}

TEST_CASE("checkpoint keeps weights and statistics") {
  std::mt19937_64 rng(6);
  auto crops = random_crops(4, 16, rng);
  ClassifierNet net(tiny(), 6);
  train_classifier(net, crops, {0, 1, 0, 1});
  const auto path = std::filesystem::temp_directory_path() / ("cls_" + std::to_string(::getpid()) + ".ckpt");
  save_classifier(path.string(), net);
  ClassifierNet other(tiny(), 99);
  load_classifier(path.string(), other);
  CHECK(other.stats.mean == net.stats.mean);
  CHECK(other.stats.stddev == net.stats.stddev);
  const auto a = classify_batch(crops, net);
  const auto b = classify_batch(crops, other);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].logit == b[i].logit);
    CHECK(a[i].feature == b[i].feature);
  }
  std::filesystem::remove(path);
}

TEST_CASE("feature csv") {
  std::vector<FeatureRow> rows{{"s1", 0, {0.5, -1.25, 3}, 7.5}, {"s2", 3, {0, 1.0 / 3, 2}, 5}};
  const std::string text = format_feature_csv(rows);
  CHECK(text.rfind("series_id,nodule_id,f0,f1,f2,d\n", 0) == 0);
  const auto back = parse_feature_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(back[1].feature == rows[1].feature);
  CHECK(back[1].nodule_id == 3);
  CHECK(back[0].d == 7.5);
}
