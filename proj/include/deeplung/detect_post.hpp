#pragma once

#include <array>
#include <string>
#include <vector>

#include "deeplung/detector.hpp"
#include "deeplung/volume.hpp"

namespace deeplung {

struct Detection {
  Box3 box;  // volume voxel coordinates
  double probability = 0.5;
  double logit = 0.0;
};

Detection make_detection(const Box3& box, double logit);

/// Patch of the volume with its placement. Offsets and interior bounds are in
/// (x, y, z) order; the interiors of all patches partition the volume.
struct VolumePatch {
  Volume patch;
  std::array<Index, 3> offset{0, 0, 0};
  std::array<Index, 3> interior_lo{0, 0, 0};
  std::array<Index, 3> interior_hi{0, 0, 0};
};

/// Per axis offsets 0, s, 2s, ... with s = patch - overlap, stopping once a
/// patch reaches the far face. Out-of-volume voxels are filled with 0.
/// Interiors split neighbouring overlaps at overlap / 2.
std::vector<VolumePatch> split_volume(const Volume& vol, int patch_extent, int overlap);

/// Axis offsets used by split_volume for one extent.
std::vector<Index> tile_offsets(Index extent, int patch_extent, int overlap);

/// Decodes every anchor of sample `n`; `offset` (x, y, z) is added to centers.
std::vector<Detection> decode_patch(const DetectorOutput& out, const std::array<double, 3>& offset,
                                    const std::vector<double>& scales, Index n = 0);

/// Keeps logit > threshold, order preserved.
std::vector<Detection> filter_by_probability(const std::vector<Detection>& dets, double logit_threshold = -2.0);

/// Descending probability, ties by lower (x, y, z, d).
bool detection_before(const Detection& a, const Detection& b);

/// Greedy suppression of boxes with IoU > threshold against a kept box.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold = 0.1);

struct DetectOptions {
  int patch_extent = 96;
  int overlap = 32;
  double logit_threshold = -2.0;
  double nms_iou = 0.1;
};

DetectOptions detect_options(const DetectorConfig& cfg);

/// Whole-volume inference on a preprocessed volume.
std::vector<Detection> detect_volume(const DetectorNet& net, const Volume& vol, const DetectOptions& opt);

struct SeriesDetections {
  std::string series_id;
  std::vector<Detection> detections;
};

/// `series_id,x,y,z,d,probability`
std::string format_detection_csv(const std::vector<SeriesDetections>& all);
std::vector<SeriesDetections> parse_detection_csv(const std::string& text);

}  // namespace deeplung
