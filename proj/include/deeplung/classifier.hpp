#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "deeplung/anchors.hpp"
#include "deeplung/augment.hpp"
#include "deeplung/config.hpp"
#include "deeplung/layers.hpp"
#include "deeplung/volume.hpp"

namespace deeplung {

struct NoduleCrop {
  Volume voxels;  // extent^3
  Box3 center;    // requested center, volume coordinates
  double d = 0;   // detected diameter, voxels
};

/// Cube of `extent` voxels around the nearest voxel to `center`; voxel c sits
/// at index extent / 2. Out-of-volume voxels are 0.
NoduleCrop crop_patch(const Volume& vol, const Box3& center, int extent);

/// conv stem, four dual path stages (first block of each strided), global
/// average pool, linear to one logit. Feature length = stem + d * blocks.
struct ClassifierConfig {
  int input_extent = 32;
  int stem_width = 160;
  int dense_increment = 80;
  std::vector<int> stage_blocks{4, 8, 12, 6};
  std::vector<int> stage_bottleneck{64, 96, 128, 160};
  std::vector<int> stage_strides{2, 2, 2, 2};
  int expected_feature_dim = 2560;

  int epochs = 1050;
  int batch_size = 8;
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  ClassificationAugmentOptions augment;
  bool use_augment = true;

  static ClassifierConfig full();
  static ClassifierConfig desk();
  static ClassifierConfig from(const KeyValueConfig& kv);
  std::string to_text() const;

  int total_blocks() const;
  int feature_dim() const { return stem_width + dense_increment * total_blocks(); }
  /// Throws SpecError when the channel arithmetic misses expected_feature_dim.
  void validate() const;
};

struct ClassifierOutput {
  Tensor logits;    // [N, 1]
  Tensor features;  // [N, F]
};

class ClassifierNet {
 public:
  ClassifierNet(const ClassifierConfig& config, std::uint64_t seed);
  ~ClassifierNet();
  ClassifierNet(ClassifierNet&&) noexcept;
  ClassifierNet& operator=(ClassifierNet&&) noexcept;

  ClassifierOutput forward(const Tensor& x, bool training) const;
  const TensorRegistry& tensors() const;
  Index parameter_count() const { return tensors().trainable_count(); }
  const ClassifierConfig& config() const;

  /// Normalization statistics of the training crops (stored with checkpoints).
  NormalizationStats stats;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

ClassifierNet build_classifier(const ClassifierConfig& config, std::uint64_t seed = 0);

struct Classification {
  double probability = 0.5;
  double logit = 0.0;
  std::vector<double> feature;
};

/// Eval-mode forward on a normalized copy of the crop.
Classification classify(const NoduleCrop& crop, const ClassifierNet& net);
std::vector<Classification> classify_batch(const std::vector<NoduleCrop>& crops, const ClassifierNet& net);

/// Mean and population stddev over every voxel of every crop.
NormalizationStats compute_stats(const std::vector<NoduleCrop>& crops);

struct ClassifierEpoch {
  int epoch = 0;
  double loss = 0;
};

struct TrainClassifierOptions {
  std::uint64_t seed = 0;
  std::function<void(const ClassifierEpoch&)> on_epoch;
};

/// Labels are 0 / 1; both classes must be present. Sets net.stats.
std::vector<ClassifierEpoch> train_classifier(ClassifierNet& net, const std::vector<NoduleCrop>& crops,
                                              const std::vector<int>& labels,
                                              const TrainClassifierOptions& opt = {});

void save_classifier(const std::string& path, const ClassifierNet& net);
void load_classifier(const std::string& path, ClassifierNet& net);

struct FeatureRow {
  std::string series_id;
  int nodule_id = 0;
  std::vector<double> feature;
  double d = 0;
};

/// `series_id,nodule_id,f0..f{F-1},d`
std::string format_feature_csv(const std::vector<FeatureRow>& rows);
std::vector<FeatureRow> parse_feature_csv(const std::string& text);

}  // namespace deeplung
