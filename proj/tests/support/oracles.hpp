#pragma once

// Brute-force references for NMS and FROC.

#include <algorithm>
#include <limits>
#include <set>
#include <vector>

#include "deeplung/eval.hpp"

namespace deeplung::oracle {

inline bool ranks_before(const Detection& a, const Detection& b) {
  if (a.probability != b.probability) return a.probability > b.probability;
  if (a.box.x != b.box.x) return a.box.x < b.box.x;
  if (a.box.y != b.box.y) return a.box.y < b.box.y;
  if (a.box.z != b.box.z) return a.box.z < b.box.z;
  return a.box.d < b.box.d;
}

/// Every box is compared against every higher-ranked survivor.
inline std::vector<Detection> nms_reference(std::vector<Detection> dets, double threshold) {
  std::sort(dets.begin(), dets.end(), ranks_before);
  std::vector<bool> dead(dets.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dead[i]) continue;
    for (std::size_t j = i + 1; j < dets.size(); ++j) {
      if (iou(dets[i].box, dets[j].box) > threshold) dead[j] = true;
    }
  }
  std::vector<Detection> out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (!dead[i]) out.push_back(dets[i]);
  }
  return out;
}

/// Re-match at every distinct probability threshold and take, per rate, the
/// best sensitivity among thresholds whose FP/scan stays within the rate.
inline double froc_reference(const std::vector<FrocCase>& cases) {
  std::set<double> thresholds{std::numeric_limits<double>::infinity()};
  int total_gt = 0;
  for (const auto& c : cases) {
    total_gt += static_cast<int>(c.gts.size());
    for (const auto& d : c.detections) thresholds.insert(d.probability);
  }
  std::vector<std::pair<double, double>> pts;
  for (double t : thresholds) {
    int hits = 0, fps = 0;
    for (const auto& c : cases) {
      std::vector<Detection> kept;
      for (const auto& d : c.detections) {
        if (d.probability >= t) kept.push_back(d);
      }
      const MatchResult m = match_detections(kept, c.gts);
      hits += m.hits();
      fps += m.false_positives;
    }
    pts.emplace_back(static_cast<double>(fps) / cases.size(), static_cast<double>(hits) / total_gt);
  }
  double score = 0;
  for (double r : kFrocRates) {
    double best = 0;
    for (const auto& [fp, s] : pts) {
      if (fp <= r) best = std::max(best, s);
    }
    score += best;
  }
  return score / kFrocRates.size();
}

}  // namespace deeplung::oracle
