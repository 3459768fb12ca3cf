#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "deeplung/anchors.hpp"
#include "deeplung/detect_post.hpp"
#include "deeplung/detector.hpp"
#include "deeplung/errors.hpp"
#include "deeplung/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace deeplung;

namespace {

Box3 random_box(std::mt19937_64& rng, double extent = 40) {
  std::uniform_real_distribution<double> c(0, extent), d(2, 20);
  return {c(rng), c(rng), c(rng), d(rng)};
}

DetectorOutput output_for(Index a, Index g, std::mt19937_64& rng) {
  return {Tensor::randn({1, a, g, g, g}, rng), Tensor::randn({1, 4 * a, g, g, g}, rng)};
}

}  // namespace

TEST_CASE("anchor counts and scales") {
  CHECK(generate_anchors({24, 24, 24}, 4, kDefaultAnchorScales).size() == 41472);
  const auto one = generate_anchors({1, 1, 1}, 4, kDefaultAnchorScales);
  REQUIRE(one.size() == 3);
  std::set<double> ds;
  for (const auto& a : one) ds.insert(a.box.d);
  CHECK(ds == std::set<double>{5, 10, 20});
  // cell centers sit at (i + 0.5) * stride - 0.5 so a flip maps cells onto cells
  CHECK(one[0].box.x == 1.5);
  CHECK(anchor_center(0, 4) + anchor_center(11, 4) == 47);
  CHECK_THROWS_AS(generate_anchors({1, 1, 1}, 4, {}), SpecError);
}

TEST_CASE("anchor flat order matches the output layout") {
  const auto anchors = generate_anchors({2, 3, 4}, 4, {5, 10});
  std::size_t n = 0;
  for (int s = 0; s < 2; ++s)
    for (Index z = 0; z < 2; ++z)
      for (Index y = 0; y < 3; ++y)
        for (Index x = 0; x < 4; ++x, ++n) {
          CHECK(anchors[n].scale_index == s);
          CHECK(anchors[n].k == z);
          CHECK(anchors[n].j == y);
          CHECK(anchors[n].i == x);
        }
}

TEST_CASE("iou examples") {
  Box3 a{0, 0, 0, 2};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, {10, 0, 0, 2}) == 0.0);
  CHECK(iou(a, {1, 0, 0, 2}) == doctest::Approx(4.0 / 12.0));
}

TEST_CASE("iou properties") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 2000; ++i) {
    Box3 a = random_box(rng), b = random_box(rng);
    const double v = iou(a, b);
    CHECK(v >= 0);
    CHECK(v <= 1);
    CHECK(v == iou(b, a));
    if (!(a == b)) CHECK(v < 1);
  }
  Box3 a{0, 0, 0, 6};
  double prev = 1;
  for (double s = 0; s < 8; s += 0.25) {
    const double v = iou(a, {s, 0, 0, 6});
    CHECK(v <= prev);
    prev = v;
  }
}

TEST_CASE("encode examples") {
  CHECK(encode_box({12.5, 10, 10, 5}, {10, 10, 10, 5}) == BoxDelta{0.5, 0, 0, 0});
  const BoxDelta t = encode_box({10, 10, 10, 10}, {10, 10, 10, 5});
  CHECK(t[3] == doctest::Approx(0.6931).epsilon(1e-4));
  CHECK(decode_box({0, 0, 0, std::log(4.0)}, {1, 2, 3, 5}).d == doctest::Approx(20));
  CHECK(decode_box({0, 0, 0, 0}, {1, 2, 3, 5}) == Box3{1, 2, 3, 5});
  CHECK_THROWS_AS(encode_box({0, 0, 0, 0}, {0, 0, 0, 5}), DomainError);
  CHECK_THROWS_AS(encode_box({0, 0, 0, 5}, {0, 0, 0, -1}), DomainError);
}

TEST_CASE("encode/decode roundtrip over 10^4 pairs") {
  std::mt19937_64 rng(2);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    Box3 g = random_box(rng), a = random_box(rng);
    Box3 b = decode_box(encode_box(g, a), a);
    worst = std::max({worst, std::abs(b.x - g.x), std::abs(b.y - g.y), std::abs(b.z - g.z), std::abs(b.d - g.d)});
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("assignment examples") {
  const auto anchors = generate_anchors({4, 4, 4}, 4, kDefaultAnchorScales);
  for (const auto& t : assign_targets(anchors, {})) CHECK(t.label == AnchorLabel::kNegative);

  const Box3 exact = anchors[21].box;
  const auto targets = assign_targets(anchors, {exact});
  CHECK(targets[21].label == AnchorLabel::kPositive);
  CHECK(targets[21].t == BoxDelta{0, 0, 0, 0});

  // a d=10 anchor 70/13 voxels from a d=10 gt has IoU 0.3; a second anchor sits exactly on the gt
  const Anchor& a10 = anchors[64 + 21];
  Box3 gt = a10.box;
  gt.x += 70.0 / 13.0;
  REQUIRE(iou(gt, a10.box) == doctest::Approx(0.3));
  Anchor on = a10;
  on.box = gt;
  const auto t2 = assign_targets({a10, on}, {gt});
  CHECK(t2[0].label == AnchorLabel::kIgnore);
  CHECK(t2[1].label == AnchorLabel::kPositive);
}

TEST_CASE("assignment invariants") {
  std::mt19937_64 rng(3);
  const auto anchors = generate_anchors({6, 6, 6}, 4, kDefaultAnchorScales);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Box3> gts;
    const int n = 1 + trial % 4;
    for (int i = 0; i < n; ++i) gts.push_back(random_box(rng, 24));
    const auto targets = assign_targets(anchors, gts);
    std::vector<bool> covered(gts.size(), false);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      if (targets[i].label == AnchorLabel::kPositive) {
        REQUIRE(targets[i].gt_index >= 0);
        covered[targets[i].gt_index] = true;
      }
      if (targets[i].label == AnchorLabel::kNegative) {
        for (const auto& g : gts) CHECK(iou(anchors[i].box, g) < 0.02);
      }
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
      bool overlaps = false;
      for (const auto& a : anchors) overlaps |= iou(a.box, gts[g]) > 0;
      if (overlaps) CHECK(covered[g]);
    }
  }
}

TEST_CASE("loss examples") {
  DetectorOutput out{Tensor({1, 1, 1, 1, 1}, {0.0}), Tensor({1, 4, 1, 1, 1}, {0, 0, 0, 0})};
  std::vector<std::vector<AnchorTarget>> neg{{AnchorTarget{}}};
  LossBreakdown l = detector_loss(out, neg);
  CHECK(l.total.item() == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-12));
  CHECK(l.lambda == 0.5);

  AnchorTarget pos;
  pos.label = AnchorLabel::kPositive;
  pos.t = {-0.5, 0, 0, 0};
  pos.gt_index = 0;
  DetectorOutput good{Tensor({1, 1, 1, 1, 1}, {50.0}), Tensor({1, 4, 1, 1, 1}, {0, 0, 0, 0})};
  LossBreakdown lp = detector_loss(good, {{pos}}, {0.5, 2, 0});
  CHECK(lp.reg == doctest::Approx(0.125));
  CHECK(lp.cls < 1e-20);

  pos.t = {0, 0, 0, 0};
  LossBreakdown perfect = detector_loss(good, {{pos}}, {0.5, 2, 0});
  CHECK(perfect.total.item() < 1e-20);

  AnchorTarget ign;
  ign.label = AnchorLabel::kIgnore;
  LossBreakdown none = detector_loss(out, {{ign}});
  CHECK(none.no_samples);
  CHECK(none.total.item() == 0.0);
}

TEST_CASE("hard negatives are the top logits") {
  // logits 0..7 at anchors 0..7; anchor 0 positive; ratio 2 picks anchors 7 and 6
  std::vector<double> z{0, 1, 2, 3, 4, 5, 6, 7};
  DetectorOutput out{Tensor({1, 1, 2, 2, 2}, z), Tensor::zeros({1, 4, 2, 2, 2})};
  std::vector<AnchorTarget> t(8);
  t[0].label = AnchorLabel::kPositive;
  t[0].gt_index = 0;
  LossBreakdown l = detector_loss(out, {t}, {0.5, 2, 2});
  CHECK(l.positives == 1);
  CHECK(l.negatives == 2);
  const double cls = (bce_with_logits(0.0, 1) + bce_with_logits(7.0, 0) + bce_with_logits(6.0, 0)) / 3;
  CHECK(l.cls == doctest::Approx(cls).epsilon(1e-12));
}

TEST_CASE("gradcheck detector loss through head tensors") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Index g = 2 + trial % 2;
    const auto anchors = generate_anchors({static_cast<int>(g), static_cast<int>(g), static_cast<int>(g)}, 4,
                                          kDefaultAnchorScales);
    std::vector<Box3> gts{random_box(rng, 4.0 * g)};
    auto targets = assign_targets(anchors, gts);
    DetectorOutput o = output_for(3, g, rng);
    auto res = testing::grad_check(
        [&](const std::vector<Tensor>& in) {
          return detector_loss({in[0], in[1]}, {targets}).total;
        },
        {o.logits, o.regression});
    CHECK(res.finite);
    CHECK(res.max_rel_error <= 1e-4);
  }
}

TEST_CASE("parameter counts") {
  const Index dpn = DetectorNet(DetectorConfig::full(DetectorArch::kDpn26), 0).parameter_count();
  const Index res = DetectorNet(DetectorConfig::full(DetectorArch::kRes18), 0).parameter_count();
  CHECK(dpn < res / 2);
  const Index dpn_desk = DetectorNet(DetectorConfig::desk(DetectorArch::kDpn26), 0).parameter_count();
  const Index res_desk = DetectorNet(DetectorConfig::desk(DetectorArch::kRes18), 0).parameter_count();
  CHECK(dpn_desk < res_desk / 2);
}

TEST_CASE("detector shapes") {
  DetectorConfig cfg = DetectorConfig::desk();
  cfg.input_extent = 16;
  cfg.patch_overlap = 0;
  DetectorNet net(cfg, 1);
  std::mt19937_64 rng(5);
  Tensor x = Tensor::randn({1, 1, 16, 16, 16}, rng);
  DetectorOutput o = net.forward(x);
  CHECK(o.logits.shape() == Shape{1, 3, 4, 4, 4});
  CHECK(o.regression.shape() == Shape{1, 12, 4, 4, 4});
  CHECK(DetectorNet::grid_for({96, 96, 96}) == Int3{24, 24, 24});
  CHECK_THROWS(net.forward(Tensor::zeros({1, 1, 12, 16, 16})));
}

TEST_CASE("config text roundtrip") {
  DetectorConfig a = DetectorConfig::desk(DetectorArch::kRes18);
  a.lambda = 0.25;
  a.anchor_scales = {4, 8};
  auto kv = KeyValueConfig::parse(a.to_text());
  DetectorConfig b = DetectorConfig::from(kv);
  CHECK(b.to_text() == a.to_text());
  CHECK_THROWS_AS(DetectorConfig::from(KeyValueConfig::parse("bogus = 1\n")), UsageError);
}

TEST_CASE("zero learning rate keeps the weights") {
  DetectorConfig cfg = DetectorConfig::desk();
  cfg.input_extent = 32;
  cfg.patch_overlap = 0;
  cfg.epochs = 1;
  cfg.base_lr = 0;
  cfg.weight_decay = 0;
  DetectorNet net(cfg, 2);
  std::vector<std::vector<double>> before;
  for (const auto& t : net.tensors().trainable()) before.emplace_back(t.data().begin(), t.data().end());
  DetectionSample s{"a", Volume(32, 32, 32, 0.1), {{8, 8, 8, 6}}};
  s.volume.at(8, 8, 8) = 1;
  train_detector(net, {s});
  std::size_t i = 0;
  for (const auto& t : net.tensors().trainable()) {
    CHECK(std::equal(before[i].begin(), before[i].end(), t.data().begin()));
    ++i;
  }
}

TEST_CASE("tiling") {
  CHECK(tile_offsets(160, 96, 32) == std::vector<Index>{0, 64});
  CHECK(tile_offsets(96, 96, 32) == std::vector<Index>{0});
  CHECK(tile_offsets(40, 96, 32) == std::vector<Index>{0});
  Volume v(96, 96, 96);
  const auto one = split_volume(v, 96, 32);
  REQUIRE(one.size() == 1);
  CHECK(one[0].offset == std::array<Index, 3>{0, 0, 0});
}

TEST_CASE("patch interiors partition the volume") {
  std::mt19937_64 rng(6);
  Volume v(37, 50, 29);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& x : v.voxels) x = u(rng);
  const auto patches = split_volume(v, 16, 4);
  Volume rebuilt(37, 50, 29, -1.0);
  std::vector<int> hits(v.voxels.size(), 0);
  for (const auto& p : patches) {
    CHECK(p.patch.depth == 16);
    for (Index z = p.interior_lo[2]; z < p.interior_hi[2]; ++z)
      for (Index y = p.interior_lo[1]; y < p.interior_hi[1]; ++y)
        for (Index x = p.interior_lo[0]; x < p.interior_hi[0]; ++x) {
          REQUIRE(v.contains(z, y, x));
          rebuilt.at(z, y, x) = p.patch.at(z - p.offset[2], y - p.offset[1], x - p.offset[0]);
          ++hits[rebuilt.index(z, y, x)];
        }
  }
  CHECK(rebuilt.voxels == v.voxels);
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
}

TEST_CASE("decode offsets and counts") {
  std::mt19937_64 rng(7);
  DetectorOutput o = output_for(3, 2, rng);
  const auto a = decode_patch(o, {0, 0, 0}, kDefaultAnchorScales);
  const auto b = decode_patch(o, {64, 0, 0}, kDefaultAnchorScales);
  REQUIRE(a.size() == 24);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(b[i].box.x == doctest::Approx(a[i].box.x + 64));
    CHECK(b[i].box.y == a[i].box.y);
    CHECK(a[i].probability == doctest::Approx(sigmoid(a[i].logit)));
  }
}

TEST_CASE("probability filter") {
  std::vector<Detection> d{make_detection({0, 0, 0, 5}, -2.01), make_detection({1, 0, 0, 5}, 0.0)};
  const auto f = filter_by_probability(d);
  REQUIRE(f.size() == 1);
  CHECK(f[0].logit == 0.0);
  CHECK(filter_by_probability({}).empty());
  CHECK(sigmoid(-2.0) == doctest::Approx(0.1192).epsilon(1e-4));
}

TEST_CASE("nms examples") {
  Detection a = make_detection({5, 5, 5, 5}, 2.0);
  CHECK(nms({a}).size() == 1);
  Detection b = make_detection({5, 5, 5, 5}, 1.0);
  const auto kept = nms({b, a});
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].logit == 2.0);
}

TEST_CASE("nms matches the quadratic reference") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Detection> dets;
    std::uniform_real_distribution<double> z(-4, 4);
    for (int i = 0; i < 200; ++i) dets.push_back(make_detection(random_box(rng, 60), std::round(z(rng) * 4) / 4));
    const auto got = nms(dets, 0.1);
    const auto want = oracle::nms_reference(dets, 0.1);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].box == want[i].box);
      CHECK(got[i].logit == want[i].logit);
    }
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (i > 0) CHECK(got[i].probability <= got[i - 1].probability);
      for (std::size_t j = i + 1; j < got.size(); ++j) CHECK(iou(got[i].box, got[j].box) <= 0.1);
    }
  }
}

TEST_CASE("filter and nms commute") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Detection> dets;
    std::normal_distribution<double> z(-2, 2);
    for (int i = 0; i < 80; ++i) dets.push_back(make_detection(random_box(rng, 30), z(rng)));
    const auto a = nms(filter_by_probability(dets));
    const auto b = filter_by_probability(nms(dets));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].box == b[i].box);
  }
}

TEST_CASE("detection csv roundtrip") {
  std::vector<SeriesDetections> all{{"s1", {make_detection({1.25, 2, 3, 5.5}, 0.3)}}, {"s2", {}}};
  const std::string text = format_detection_csv(all);
  CHECK(text.rfind("series_id,x,y,z,d,probability\n", 0) == 0);
  const auto back = parse_detection_csv(text);
  REQUIRE(!back.empty());
  CHECK(back[0].detections[0].box == all[0].detections[0].box);
  CHECK(back[0].detections[0].probability == doctest::Approx(all[0].detections[0].probability).epsilon(1e-15));
}

TEST_CASE("detection is translation consistent") {
  DetectorConfig cfg = DetectorConfig::desk();
  cfg.input_extent = 16;
  cfg.patch_overlap = 0;
  DetectorNet net(cfg, 3);
  std::mt19937_64 rng(10);
  Volume v(16, 16, 48, 0.0);
  std::uniform_real_distribution<double> u(0, 1);
  for (Index z = 0; z < 16; ++z)
    for (Index y = 0; y < 16; ++y)
      for (Index x = 16; x < 32; ++x) v.at(z, y, x) = u(rng);
  Volume shifted(16, 16, 48, 0.0);
  for (Index z = 0; z < 16; ++z)
    for (Index y = 0; y < 16; ++y)
      for (Index x = 0; x < 16; ++x) shifted.at(z, y, x) = v.at(z, y, x + 16);
  std::vector<Detection> a_all = decode_patch(net.forward(split_volume(v, 16, 0)[1].patch.to_tensor()),
                                              {16, 0, 0}, cfg.anchor_scales);
  std::vector<Detection> b_all = decode_patch(net.forward(split_volume(shifted, 16, 0)[0].patch.to_tensor()),
                                              {0, 0, 0}, cfg.anchor_scales);
  REQUIRE(a_all.size() == b_all.size());
  for (std::size_t i = 0; i < a_all.size(); ++i) {
    CHECK(a_all[i].box.x == doctest::Approx(b_all[i].box.x + 16));
    CHECK(a_all[i].logit == b_all[i].logit);
  }
}
