#include "deeplung/anchors.hpp"

#include <algorithm>
#include <cmath>

#include "deeplung/errors.hpp"

namespace deeplung {

double anchor_center(Index cell, int stride) { return (static_cast<double>(cell) + 0.5) * stride - 0.5; }

std::vector<Anchor> generate_anchors(Int3 grid, int stride, const std::vector<double>& scales) {
  if (scales.empty()) throw SpecError("anchor scales must be nonempty");
  std::vector<Anchor> out;
  out.reserve(scales.size() * static_cast<std::size_t>(grid.d) * grid.h * grid.w);
  for (std::size_t a = 0; a < scales.size(); ++a) {
    if (!(scales[a] > 0)) throw DomainError("anchor scale must be positive");
    for (Index z = 0; z < grid.d; ++z)
      for (Index y = 0; y < grid.h; ++y)
        for (Index x = 0; x < grid.w; ++x) {
          Anchor an;
          an.i = x;
          an.j = y;
          an.k = z;
          an.scale_index = static_cast<int>(a);
          an.box = {anchor_center(x, stride), anchor_center(y, stride), anchor_center(z, stride), scales[a]};
          out.push_back(an);
        }
  }
  return out;
}

namespace {

double overlap_1d(double ca, double ra, double cb, double rb) {
  const double lo = std::max(ca - ra, cb - rb);
  const double hi = std::min(ca + ra, cb + rb);
  return std::max(0.0, hi - lo);
}

}  // namespace

double iou(const Box3& a, const Box3& b) {
  const double ra = a.d / 2, rb = b.d / 2;
  const double ix = overlap_1d(a.x, ra, b.x, rb);
  if (ix == 0.0) return 0.0;
  const double iy = overlap_1d(a.y, ra, b.y, rb);
  if (iy == 0.0) return 0.0;
  const double iz = overlap_1d(a.z, ra, b.z, rb);
  const double inter = ix * iy * iz;
  const double uni = a.d * a.d * a.d + b.d * b.d * b.d - inter;
  if (uni <= 0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

BoxDelta encode_box(const Box3& gt, const Box3& anchor) {
  if (!(anchor.d > 0) || !(gt.d > 0)) throw DomainError("box diameters must be positive");
  return {(gt.x - anchor.x) / anchor.d, (gt.y - anchor.y) / anchor.d, (gt.z - anchor.z) / anchor.d,
          std::log(gt.d / anchor.d)};
}

Box3 decode_box(const BoxDelta& t, const Box3& anchor) {
  return {anchor.x + t[0] * anchor.d, anchor.y + t[1] * anchor.d, anchor.z + t[2] * anchor.d,
          anchor.d * std::exp(t[3])};
}

std::vector<AnchorTarget> assign_targets(const std::vector<Anchor>& anchors, const std::vector<Box3>& gts,
                                         const AssignOptions& opt) {
  std::vector<AnchorTarget> out(anchors.size());
  if (gts.empty()) return out;

  const std::size_t m = gts.size();
  // Per-gt best anchors, kept sorted by IoU for the forced pass.
  std::vector<std::vector<std::pair<double, std::size_t>>> ranked(m);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < m; ++g) {
      const double v = iou(anchors[a].box, gts[g]);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
      if (v > 0) ranked[g].emplace_back(v, a);
    }
    AnchorTarget& t = out[a];
    if (best > opt.positive_iou) {
      t.label = AnchorLabel::kPositive;
      t.gt_index = best_gt;
    } else if (best < opt.negative_iou) {
      t.label = AnchorLabel::kNegative;
    } else {
      t.label = AnchorLabel::kIgnore;
    }
  }

  if (opt.force_best) {
    std::vector<bool> forced(anchors.size(), false);
    for (std::size_t g = 0; g < m; ++g) {
      auto& r = ranked[g];
      std::stable_sort(r.begin(), r.end(), [](const auto& p, const auto& q) { return p.first > q.first; });
      for (const auto& [v, a] : r) {
        if (forced[a]) continue;
        forced[a] = true;
        out[a].label = AnchorLabel::kPositive;
        out[a].gt_index = static_cast<int>(g);
        break;
      }
    }
  }

  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (out[a].label == AnchorLabel::kPositive) {
      out[a].t = encode_box(gts[static_cast<std::size_t>(out[a].gt_index)], anchors[a].box);
    }
  }
  return out;
}

}  // namespace deeplung
