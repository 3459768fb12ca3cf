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

namespace deeplung {

enum class DetectorArch { kDpn26, kRes18 };

const char* arch_name(DetectorArch arch);
DetectorArch parse_arch(const std::string& name);

inline constexpr int kDetectorStride = 4;

/// Every width the detector needs. Stage lists have four entries with
/// strides 2, 2, 2, 1 after the stem pool; the decoder climbs 16 -> 8 -> 4.
struct DetectorConfig {
  DetectorArch arch = DetectorArch::kDpn26;
  int input_extent = 96;
  int stem_width = 24;
  // dpn26 encoder: per-stage dense increment and bottleneck width, 2 blocks each
  std::vector<int> stage_dense{16, 32, 32, 32};
  std::vector<int> stage_bottleneck{32, 48, 64, 64};
  // res18 encoder: per-stage width, 2 basic blocks each
  std::vector<int> res_widths{32, 64, 128, 128};
  int deconv_width = 64;
  int decoder_dense = 32;       // dpn26 decoder blocks
  int decoder_bottleneck = 64;
  int decoder_res_width = 96;   // res18 decoder blocks
  int head_width = 64;
  double dropout = 0.5;
  double head_bias_init = 0.0;

  std::vector<double> anchor_scales = kDefaultAnchorScales;
  double positive_iou = 0.5;
  double negative_iou = 0.02;
  double lambda = 0.5;
  int negative_ratio = 2;
  int min_negatives = 2;

  int epochs = 150;
  int batch_size = 1;
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool flip_augment = true;
  bool scale_augment = true;
  double scale_min = 0.75;
  double scale_max = 1.25;
  int checkpoint_interval = 0;

  double logit_threshold = -2.0;
  double nms_iou = 0.1;
  int patch_overlap = 32;

  static DetectorConfig full(DetectorArch arch = DetectorArch::kDpn26);
  static DetectorConfig desk(DetectorArch arch = DetectorArch::kDpn26);

  /// Starts from desk() or full() (key `preset`), then applies overrides.
  static DetectorConfig from(const KeyValueConfig& kv);
  std::string to_text() const;
  void validate() const;
  int anchors_per_cell() const { return static_cast<int>(anchor_scales.size()); }
  AssignOptions assign_options() const { return {positive_iou, negative_iou, true}; }
};

struct DetectorOutput {
  Tensor logits;      // [N, A, D', H', W']
  Tensor regression;  // [N, 4A, D', H', W'], channel 4a + c
};

class DetectorNet {
 public:
  DetectorNet(const DetectorConfig& config, std::uint64_t seed);
  ~DetectorNet();
  DetectorNet(DetectorNet&&) noexcept;
  DetectorNet& operator=(DetectorNet&&) noexcept;

  /// x is [N, 1, D, H, W] with every extent divisible by 16. `rng` drives dropout.
  DetectorOutput forward(const Tensor& x, bool training, std::mt19937_64& rng) const;
  DetectorOutput forward(const Tensor& x) const;  // eval mode

  const TensorRegistry& tensors() const;
  Index parameter_count() const { return tensors().trainable_count(); }
  const DetectorConfig& config() const;

  /// Output grid for an input extent; throws SpecError when not divisible.
  static Int3 grid_for(Int3 input);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Convenience entry point; validates divisibility of `input_extent`.
DetectorNet build_detector(DetectorArch arch, int input_extent, std::uint64_t seed = 0);

struct LossBreakdown {
  Tensor total;  // scalar, differentiable
  double cls = 0;
  double reg = 0;
  double lambda = 0.5;
  int positives = 0;
  int negatives = 0;
  bool no_samples = false;
};

struct LossOptions {
  double lambda = 0.5;
  int negative_ratio = 2;
  int min_negatives = 2;
};

LossOptions loss_options(const DetectorConfig& cfg);

/// `targets[n]` holds the flat-ordered anchor targets for sample n.
/// Negatives are hard-mined per sample: the max(min, ratio * |P|) highest
/// logits among p* = 0 anchors (ties by lower index).
LossBreakdown detector_loss(const DetectorOutput& out, const std::vector<std::vector<AnchorTarget>>& targets,
                            const LossOptions& opt = {});

/// Preprocessed volume with voxel-space boxes.
struct DetectionSample {
  std::string series_id;
  Volume volume;
  std::vector<Box3> boxes;
};

struct EpochLoss {
  int epoch = 0;
  double total = 0, cls = 0, reg = 0;
};

struct TrainDetectorOptions {
  std::uint64_t seed = 0;
  /// Called after every epoch whose 1-based index is a multiple of the
  /// config's checkpoint_interval.
  std::function<void(int epoch, const DetectorNet&)> on_checkpoint;
  std::function<void(const EpochLoss&)> on_epoch;
};

/// Input-sized training patch: a random crop (zero padded) when the volume
/// differs from the configured extent. Boxes are shifted along.
DetectionSample training_patch(const DetectionSample& s, int extent, std::mt19937_64& rng);

/// Mini-batch SGD over `cfg.epochs` epochs using the detector schedule.
/// Throws NumericError when the loss becomes non-finite.
std::vector<EpochLoss> train_detector(DetectorNet& net, const std::vector<DetectionSample>& data,
                                      const TrainDetectorOptions& opt = {});

std::string format_loss_csv(const std::vector<EpochLoss>& curve);

}  // namespace deeplung
