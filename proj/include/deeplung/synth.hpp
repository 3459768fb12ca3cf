#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "deeplung/anchors.hpp"
#include "deeplung/annotations.hpp"
#include "deeplung/volume.hpp"

namespace deeplung {

struct NoduleSpec {
  int min_per_volume = 1;
  int max_per_volume = 3;
  double d_min = 5.0;
  double d_max = 12.0;
  double malignant_fraction = 0.5;
};

struct SynthNodule {
  Box3 box;  // voxel coordinates
  bool malignant = false;
};

/// `volume` holds HU values (spacing 1, origin 0).
struct SynthCase {
  std::string series_id;
  Volume volume;
  std::vector<SynthNodule> nodules;
};

struct SynthDataset {
  std::vector<SynthCase> cases;
  std::vector<AnnotationRecord> manifest;
};

/// Smooth background in [0, 0.3] (preprocessed units) with planted nodules:
/// benign ones are gaussian blobs, malignant ones carry radial spikes. Each
/// volume depends only on (seed, index).
SynthDataset synth_generate(int n_volumes, int extent, const NoduleSpec& spec, std::uint64_t seed);

/// Single-nodule volumes of `extent`^3 with the nodule near the center,
/// alternating benign / malignant (even index benign).
std::vector<SynthCase> synth_crops(int n, int extent, std::uint64_t seed, const NoduleSpec& spec = {});

/// Adds one nodule to a volume in preprocessed units (max-composited).
void render_nodule(Volume& vol, const SynthNodule& nodule, std::mt19937_64& rng);

/// Smooth noise field in [0, 0.3], preprocessed units.
Volume synth_background(Index extent, std::mt19937_64& rng);

/// Writes `<dir>/<series>.mhd/.raw` (MET_SHORT HU) and `<dir>/manifest.csv`.
void write_synth_dataset(const std::string& dir, const SynthDataset& data);

/// Radiologist-style scores for a synthetic label: malignant draws from {4, 5},
/// benign from {1, 2}; 2..4 readers, unused slots 0.
std::vector<int> synth_scores(bool malignant, std::mt19937_64& rng);

}  // namespace deeplung
