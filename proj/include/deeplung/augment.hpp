#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "deeplung/anchors.hpp"
#include "deeplung/volume.hpp"

namespace deeplung {

struct DetectionAugmentOptions {
  bool flip = true;
  bool scale = true;
  double scale_min = 0.75;
  double scale_max = 1.25;
};

/// One concrete draw: flips per axis (x, y, z) and a scale factor about the
/// volume center.
struct DetectionAugmentDraw {
  std::array<bool, 3> flip{false, false, false};
  double scale = 1.0;

  bool is_identity() const { return !flip[0] && !flip[1] && !flip[2] && scale == 1.0; }
};

DetectionAugmentDraw draw_detection_augment(std::mt19937_64& rng, const DetectionAugmentOptions& opt = {});

/// Flip maps x to extent - 1 - x. Scale s resamples voxels trilinearly about
/// the center c = (extent - 1) / 2 so that p' = c + (p - c) * s, and scales
/// box diameters by s. Boxes whose centers leave the volume are dropped.
std::pair<Volume, std::vector<Box3>> apply_detection_augment(const Volume& vol, const std::vector<Box3>& boxes,
                                                             const DetectionAugmentDraw& draw);

Box3 augment_box(const Box3& box, const Volume& vol, const DetectionAugmentDraw& draw);

std::pair<Volume, std::vector<Box3>> augment_detection(const Volume& vol, const std::vector<Box3>& boxes,
                                                       std::uint64_t seed, const DetectionAugmentOptions& opt = {});

struct NormalizationStats {
  double mean = 0.0;
  double stddev = 1.0;
};

struct ClassificationAugmentOptions {
  int pad = 2;               // 32 -> 36 per axis
  bool flip = true;
  double zero_patch_probability = 0.5;
  int zero_patch_extent = 4;
};

struct ClassificationAugmentDraw {
  std::array<int, 3> offset{2, 2, 2};  // crop corner inside the padded grid, (x, y, z)
  std::array<bool, 3> flip{false, false, false};
  bool zero_patch = false;
  std::array<int, 3> patch_corner{0, 0, 0};
};

ClassificationAugmentDraw draw_classification_augment(std::mt19937_64& rng, Index extent,
                                                      const ClassificationAugmentOptions& opt = {});

/// Pad with 0, crop back to the input extent at draw.offset, flip, z-score
/// with `stats`, then zero one cube when draw.zero_patch.
Volume apply_classification_augment(const Volume& crop, const ClassificationAugmentDraw& draw,
                                     const NormalizationStats& stats, const ClassificationAugmentOptions& opt = {});

Volume augment_classification(const Volume& crop, std::uint64_t seed, const NormalizationStats& stats,
                              const ClassificationAugmentOptions& opt = {});

/// z-score without augmentation.
Volume normalize(const Volume& crop, const NormalizationStats& stats);

}  // namespace deeplung
