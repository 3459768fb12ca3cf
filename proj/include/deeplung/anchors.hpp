#pragma once

#include <array>
#include <vector>

#include "deeplung/conv.hpp"

namespace deeplung {

/// Cube given by center (voxel index coordinates) and edge length d.
struct Box3 {
  double x = 0, y = 0, z = 0, d = 1;
  friend bool operator==(const Box3&, const Box3&) = default;
};

struct Anchor {
  Index i = 0, j = 0, k = 0;  // grid cell along x, y, z
  int scale_index = 0;
  Box3 box;
};

using BoxDelta = std::array<double, 4>;

enum class AnchorLabel { kNegative = 0, kPositive = 1, kIgnore = 2 };

struct AnchorTarget {
  AnchorLabel label = AnchorLabel::kNegative;
  BoxDelta t{};      // meaningful iff label == kPositive
  int gt_index = -1;
};

inline const std::vector<double> kDefaultAnchorScales{5.0, 10.0, 20.0};

/// Grid extents in (d, h, w) order. Flat anchor order is
/// ((a * D + z) * H + y) * W + x, matching logits[n, a, z, y, x].
/// Cell centers sit at (i + 0.5) * stride - 0.5 so cells are centered on the
/// voxel block they cover.
std::vector<Anchor> generate_anchors(Int3 grid, int stride, const std::vector<double>& scales);

double anchor_center(Index cell, int stride);

double iou(const Box3& a, const Box3& b);

BoxDelta encode_box(const Box3& gt, const Box3& anchor);
Box3 decode_box(const BoxDelta& t, const Box3& anchor);

struct AssignOptions {
  double positive_iou = 0.5;
  double negative_iou = 0.02;
  bool force_best = true;
};

/// Positive above positive_iou (target = argmax gt), negative when IoU with
/// every gt is below negative_iou, ignore otherwise. Each gt also forces its
/// best anchor positive, taking the next best if another gt already forced it.
std::vector<AnchorTarget> assign_targets(const std::vector<Anchor>& anchors, const std::vector<Box3>& gts,
                                         const AssignOptions& opt = {});

}  // namespace deeplung
