#include "deeplung/detector.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "deeplung/dpn.hpp"
#include "deeplung/errors.hpp"
#include "deeplung/ops.hpp"

namespace deeplung {

const char* arch_name(DetectorArch arch) { return arch == DetectorArch::kDpn26 ? "dpn26" : "res18"; }

DetectorArch parse_arch(const std::string& name) {
  if (name == "dpn26") return DetectorArch::kDpn26;
  if (name == "res18") return DetectorArch::kRes18;
  throw UsageError("unknown detector arch " + name + " (expected dpn26 or res18)");
}

DetectorConfig DetectorConfig::full(DetectorArch arch) {
  DetectorConfig c;
  c.arch = arch;
  return c;
}

DetectorConfig DetectorConfig::desk(DetectorArch arch) {
  DetectorConfig c;
  c.arch = arch;
  c.input_extent = 48;
  c.stem_width = 12;
  c.stage_dense = {8, 16, 16, 16};
  c.stage_bottleneck = {16, 24, 32, 32};
  c.res_widths = {16, 32, 64, 64};
  c.deconv_width = 32;
  c.decoder_dense = 16;
  c.decoder_bottleneck = 32;
  c.decoder_res_width = 48;
  c.head_width = 32;
  c.patch_overlap = 16;
  // small-data setting: no dropout or augmentation, 4 volumes per step
  c.dropout = 0.0;
  c.flip_augment = false;
  c.scale_augment = false;
  c.batch_size = 4;
  c.epochs = 150;
  return c;
}

namespace {

const std::set<std::string> kDetectorKeys{
    "preset", "arch", "input_extent", "stem_width", "stage_dense", "stage_bottleneck", "res_widths",
    "deconv_width", "decoder_dense", "decoder_bottleneck", "decoder_res_width", "head_width", "dropout",
    "head_bias_init", "anchor_scales", "positive_iou", "negative_iou", "lambda", "negative_ratio",
    "min_negatives", "epochs", "batch_size", "base_lr", "momentum", "weight_decay", "flip_augment",
    "scale_augment", "scale_min", "scale_max", "checkpoint_interval", "logit_threshold", "nms_iou",
    "patch_overlap"};

}  // namespace

DetectorConfig DetectorConfig::from(const KeyValueConfig& kv) {
  kv.check_known(kDetectorKeys);
  const DetectorArch arch = parse_arch(kv.get_string("arch", "dpn26"));
  const std::string preset = kv.get_string("preset", "desk");
  DetectorConfig c;
  if (preset == "desk") {
    c = desk(arch);
  } else if (preset == "full") {
    c = full(arch);
  } else {
    throw UsageError("unknown detector preset " + preset);
  }
  c.input_extent = kv.get_int("input_extent", c.input_extent);
  c.stem_width = kv.get_int("stem_width", c.stem_width);
  c.stage_dense = kv.get_ints("stage_dense", c.stage_dense);
  c.stage_bottleneck = kv.get_ints("stage_bottleneck", c.stage_bottleneck);
  c.res_widths = kv.get_ints("res_widths", c.res_widths);
  c.deconv_width = kv.get_int("deconv_width", c.deconv_width);
  c.decoder_dense = kv.get_int("decoder_dense", c.decoder_dense);
  c.decoder_bottleneck = kv.get_int("decoder_bottleneck", c.decoder_bottleneck);
  c.decoder_res_width = kv.get_int("decoder_res_width", c.decoder_res_width);
  c.head_width = kv.get_int("head_width", c.head_width);
  c.dropout = kv.get_double("dropout", c.dropout);
  c.head_bias_init = kv.get_double("head_bias_init", c.head_bias_init);
  c.anchor_scales = kv.get_doubles("anchor_scales", c.anchor_scales);
  c.positive_iou = kv.get_double("positive_iou", c.positive_iou);
  c.negative_iou = kv.get_double("negative_iou", c.negative_iou);
  c.lambda = kv.get_double("lambda", c.lambda);
  c.negative_ratio = kv.get_int("negative_ratio", c.negative_ratio);
  c.min_negatives = kv.get_int("min_negatives", c.min_negatives);
  c.epochs = kv.get_int("epochs", c.epochs);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.base_lr = kv.get_double("base_lr", c.base_lr);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.flip_augment = kv.get_bool("flip_augment", c.flip_augment);
  c.scale_augment = kv.get_bool("scale_augment", c.scale_augment);
  c.scale_min = kv.get_double("scale_min", c.scale_min);
  c.scale_max = kv.get_double("scale_max", c.scale_max);
  c.checkpoint_interval = kv.get_int("checkpoint_interval", c.checkpoint_interval);
  c.logit_threshold = kv.get_double("logit_threshold", c.logit_threshold);
  c.nms_iou = kv.get_double("nms_iou", c.nms_iou);
  c.patch_overlap = kv.get_int("patch_overlap", c.patch_overlap);
  c.validate();
  return c;
}

std::string DetectorConfig::to_text() const {
  std::ostringstream os;
  os << "arch = " << arch_name(arch) << '\n'
     << "input_extent = " << input_extent << '\n'
     << "stem_width = " << stem_width << '\n'
     << "stage_dense = " << format_list(stage_dense) << '\n'
     << "stage_bottleneck = " << format_list(stage_bottleneck) << '\n'
     << "res_widths = " << format_list(res_widths) << '\n'
     << "deconv_width = " << deconv_width << '\n'
     << "decoder_dense = " << decoder_dense << '\n'
     << "decoder_bottleneck = " << decoder_bottleneck << '\n'
     << "decoder_res_width = " << decoder_res_width << '\n'
     << "head_width = " << head_width << '\n'
     << "dropout = " << format_double(dropout) << '\n'
     << "head_bias_init = " << format_double(head_bias_init) << '\n'
     << "anchor_scales = " << format_list(anchor_scales) << '\n'
     << "positive_iou = " << format_double(positive_iou) << '\n'
     << "negative_iou = " << format_double(negative_iou) << '\n'
     << "lambda = " << format_double(lambda) << '\n'
     << "negative_ratio = " << negative_ratio << '\n'
     << "min_negatives = " << min_negatives << '\n'
     << "epochs = " << epochs << '\n'
     << "batch_size = " << batch_size << '\n'
     << "base_lr = " << format_double(base_lr) << '\n'
     << "momentum = " << format_double(momentum) << '\n'
     << "weight_decay = " << format_double(weight_decay) << '\n'
     << "flip_augment = " << (flip_augment ? "true" : "false") << '\n'
     << "scale_augment = " << (scale_augment ? "true" : "false") << '\n'
     << "scale_min = " << format_double(scale_min) << '\n'
     << "scale_max = " << format_double(scale_max) << '\n'
     << "checkpoint_interval = " << checkpoint_interval << '\n'
     << "logit_threshold = " << format_double(logit_threshold) << '\n'
     << "nms_iou = " << format_double(nms_iou) << '\n'
     << "patch_overlap = " << patch_overlap << '\n';
  return os.str();
}

void DetectorConfig::validate() const {
  if (input_extent <= 0 || input_extent % 16 != 0) {
    throw SpecError("detector input extent " + std::to_string(input_extent) + " is not divisible by 16");
  }
  if (stage_dense.size() != 4 || stage_bottleneck.size() != 4 || res_widths.size() != 4) {
    throw SpecError("detector stage lists need 4 entries");
  }
  if (anchor_scales.empty()) throw SpecError("anchor scales must be nonempty");
  if (!(dropout >= 0 && dropout < 1)) throw SpecError("dropout rate must lie in [0, 1)");
  if (epochs < 0 || batch_size < 1) throw SpecError("epochs >= 0 and batch_size >= 1 required");
  if (patch_overlap < 0 || patch_overlap >= input_extent) throw SpecError("patch overlap must be in [0, input_extent)");
  if (!(scale_min > 0 && scale_min <= scale_max)) throw SpecError("scale jitter range invalid");
}

namespace {

/// Two 3^3 conv/bn layers with an identity or projected shortcut.
class BasicBlock {
 public:
  BasicBlock() = default;
  BasicBlock(Index in, Index out, int stride, std::mt19937_64& rng)
      : conv1_(in, out, 3, rng, {stride, 1}), conv2_(out, out, 3, rng, {1, 1}, false), bn2_(out) {
    if (stride != 1 || in != out) {
      has_projection_ = true;
      projection_ = Conv3dLayer(in, out, 1, rng, {stride, 0}, false);
      projection_bn_ = BatchNorm3dLayer(out);
    }
  }

  Tensor operator()(const Tensor& x, bool training) const {
    Tensor y = bn2_(conv2_(conv1_(x, training)), training);
    Tensor s = has_projection_ ? projection_bn_(projection_(x), training) : x;
    return relu(add(y, s));
  }

  void register_tensors(TensorRegistry& reg, const std::string& prefix) const {
    conv1_.register_tensors(reg, join_name(prefix, "conv1"));
    conv2_.register_tensors(reg, join_name(prefix, "conv2"));
    bn2_.register_tensors(reg, join_name(prefix, "bn2"));
    if (has_projection_) {
      projection_.register_tensors(reg, join_name(prefix, "proj"));
      projection_bn_.register_tensors(reg, join_name(prefix, "proj_bn"));
    }
  }

 private:
  ConvBnRelu conv1_;
  Conv3dLayer conv2_;
  BatchNorm3dLayer bn2_;
  bool has_projection_ = false;
  Conv3dLayer projection_;
  BatchNorm3dLayer projection_bn_;
};

/// deconv(k2, s2) -> bn -> relu
struct UpSample {
  UpSample() = default;
  UpSample(Index in, Index out, std::mt19937_64& rng) : deconv(in, out, 2, rng, {2, 0}, false), bn(out) {}
  Tensor operator()(const Tensor& x, bool training) const { return relu(bn(deconv(x), training)); }
  void register_tensors(TensorRegistry& reg, const std::string& prefix) const {
    deconv.register_tensors(reg, join_name(prefix, "deconv"));
    bn.register_tensors(reg, join_name(prefix, "bn"));
  }
  Deconv3dLayer deconv;
  BatchNorm3dLayer bn;
};

constexpr int kStageStrides[4] = {2, 2, 2, 1};

}  // namespace

struct DetectorNet::Impl {
  DetectorConfig cfg;
  ConvBnRelu stem1, stem2;
  // dpn26
  std::vector<DpnStack> dpn_stages;
  DualPathBlock dpn_dec1, dpn_dec2;
  // res18
  std::vector<std::vector<BasicBlock>> res_stages;
  BasicBlock res_dec1, res_dec2;

  UpSample up1, up2;
  Conv3dLayer head1, head2;
  TensorRegistry registry;

  Impl(const DetectorConfig& c, std::uint64_t seed) : cfg(c) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const Index s = cfg.stem_width;
    stem1 = ConvBnRelu(1, s, 3, rng, {1, 1});
    stem2 = ConvBnRelu(s, s, 3, rng, {1, 1});
    Index skip1 = 0, skip2 = 0, channels = s, top = 0;
    if (cfg.arch == DetectorArch::kDpn26) {
      for (int i = 0; i < 4; ++i) {
        auto base = DualPathBlockSpec::make(channels, cfg.stage_dense[i], cfg.stage_bottleneck[i]);
        dpn_stages.push_back(build_dpn_stack(2, base, {kStageStrides[i], 1}, rng));
        channels = dpn_stages.back().out_channels();
        if (i == 0) skip1 = channels;
        if (i == 1) skip2 = channels;
      }
      up1 = UpSample(channels, cfg.deconv_width, rng);
      Index c1 = cfg.deconv_width + skip2;
      dpn_dec1 = DualPathBlock(DualPathBlockSpec::make(c1, cfg.decoder_dense, cfg.decoder_bottleneck), rng);
      c1 += cfg.decoder_dense;
      up2 = UpSample(c1, cfg.deconv_width, rng);
      Index c2 = cfg.deconv_width + skip1;
      dpn_dec2 = DualPathBlock(DualPathBlockSpec::make(c2, cfg.decoder_dense, cfg.decoder_bottleneck), rng);
      top = c2 + cfg.decoder_dense;
    } else {
      for (int i = 0; i < 4; ++i) {
        const Index w = cfg.res_widths[i];
        std::vector<BasicBlock> stage;
        stage.emplace_back(channels, w, kStageStrides[i], rng);
        stage.emplace_back(w, w, 1, rng);
        res_stages.push_back(std::move(stage));
        channels = w;
        if (i == 0) skip1 = channels;
        if (i == 1) skip2 = channels;
      }
      const Index rw = cfg.decoder_res_width;
      up1 = UpSample(channels, cfg.deconv_width, rng);
      res_dec1 = BasicBlock(cfg.deconv_width + skip2, rw, 1, rng);
      up2 = UpSample(rw, cfg.deconv_width, rng);
      res_dec2 = BasicBlock(cfg.deconv_width + skip1, rw, 1, rng);
      top = rw;
    }
    head1 = Conv3dLayer(top, cfg.head_width, 1, rng);
    head2 = Conv3dLayer(cfg.head_width, 5 * cfg.anchors_per_cell(), 1, rng);
    {
      // Small init for the output layer keeps early regression deltas tame.
      NoGradGuard guard;
      for (double& v : head2.weight.data()) v *= 0.1;
      auto b = head2.bias.data();
      for (int a = 0; a < cfg.anchors_per_cell(); ++a) b[static_cast<std::size_t>(a)] = cfg.head_bias_init;
    }
    register_all();
  }

  void register_all() {
    stem1.register_tensors(registry, "stem1");
    stem2.register_tensors(registry, "stem2");
    for (std::size_t i = 0; i < dpn_stages.size(); ++i) {
      dpn_stages[i].register_tensors(registry, "stage" + std::to_string(i + 1));
    }
    for (std::size_t i = 0; i < res_stages.size(); ++i) {
      for (std::size_t j = 0; j < res_stages[i].size(); ++j) {
        res_stages[i][j].register_tensors(registry, "stage" + std::to_string(i + 1) + ".block" + std::to_string(j));
      }
    }
    up1.register_tensors(registry, "up1");
    up2.register_tensors(registry, "up2");
    if (cfg.arch == DetectorArch::kDpn26) {
      dpn_dec1.register_tensors(registry, "dec1");
      dpn_dec2.register_tensors(registry, "dec2");
    } else {
      res_dec1.register_tensors(registry, "dec1");
      res_dec2.register_tensors(registry, "dec2");
    }
    head1.register_tensors(registry, "head1");
    head2.register_tensors(registry, "head2");
  }

  Tensor body(const Tensor& x, bool training) const {
    Tensor h = max_pool3d(stem2(stem1(x, training), training), 2, 2);
    Tensor skip1, skip2;
    for (int i = 0; i < 4; ++i) {
      if (cfg.arch == DetectorArch::kDpn26) {
        h = dpn_stages[static_cast<std::size_t>(i)](h, training);
      } else {
        for (const auto& b : res_stages[static_cast<std::size_t>(i)]) h = b(h, training);
      }
      if (i == 0) skip1 = h;
      if (i == 1) skip2 = h;
    }
    h = concat_channels({up1(h, training), skip2});
    h = cfg.arch == DetectorArch::kDpn26 ? dpn_dec1(h, training) : res_dec1(h, training);
    h = concat_channels({up2(h, training), skip1});
    h = cfg.arch == DetectorArch::kDpn26 ? dpn_dec2(h, training) : res_dec2(h, training);
    return h;
  }
};

DetectorNet::DetectorNet(const DetectorConfig& config, std::uint64_t seed)
    : impl_(std::make_unique<Impl>(config, seed)) {}
DetectorNet::~DetectorNet() = default;
DetectorNet::DetectorNet(DetectorNet&&) noexcept = default;
DetectorNet& DetectorNet::operator=(DetectorNet&&) noexcept = default;

const TensorRegistry& DetectorNet::tensors() const { return impl_->registry; }
const DetectorConfig& DetectorNet::config() const { return impl_->cfg; }

Int3 DetectorNet::grid_for(Int3 input) {
  for (int e : {input.d, input.h, input.w}) {
    if (e <= 0 || e % 16 != 0) {
      throw SpecError("detector input extent " + std::to_string(e) + " is not divisible by 16");
    }
  }
  return {input.d / kDetectorStride, input.h / kDetectorStride, input.w / kDetectorStride};
}

DetectorOutput DetectorNet::forward(const Tensor& x, bool training, std::mt19937_64& rng) const {
  if (x.rank() != 5 || x.dim(1) != 1) throw DimensionError("detector input must be [N, 1, D, H, W], got " + shape_str(x.shape()));
  grid_for({static_cast<int>(x.dim(2)), static_cast<int>(x.dim(3)), static_cast<int>(x.dim(4))});
  const Impl& m = *impl_;
  Tensor h = m.body(x, training);
  h = dropout_channels(h, m.cfg.dropout, training, rng);
  h = m.head2(relu(m.head1(h)));
  const Index a = m.cfg.anchors_per_cell();
  return {slice_channels(h, 0, a), slice_channels(h, a, 5 * a)};
}

DetectorOutput DetectorNet::forward(const Tensor& x) const {
  std::mt19937_64 rng(0);
  return forward(x, false, rng);
}

DetectorNet build_detector(DetectorArch arch, int input_extent, std::uint64_t seed) {
  DetectorConfig cfg = input_extent >= 96 ? DetectorConfig::full(arch) : DetectorConfig::desk(arch);
  cfg.input_extent = input_extent;
  if (input_extent <= 0 || input_extent % 16 != 0) {
    throw SpecError("detector input extent " + std::to_string(input_extent) + " is not divisible by 16");
  }
  if (cfg.patch_overlap >= input_extent) cfg.patch_overlap = 0;
  return DetectorNet(cfg, seed);
}

LossBreakdown detector_loss(const DetectorOutput& out, const std::vector<std::vector<AnchorTarget>>& targets,
                            const LossOptions& opt) {
  const Index n = out.logits.dim(0);
  const Index a = out.logits.dim(1);
  const Index cells = out.logits.numel() / (n * a);
  const Index per_sample = a * cells;
  if (static_cast<Index>(targets.size()) != n) throw DimensionError("one target list per batch sample required");
  if (out.regression.dim(1) != 4 * a) throw DimensionError("regression must carry 4 channels per anchor");

  LossBreakdown res;
  res.lambda = opt.lambda;
  std::vector<Index> cls_idx, reg_idx;
  std::vector<double> cls_lab, reg_tgt;
  const auto logits = out.logits.data();
  for (Index s = 0; s < n; ++s) {
    const auto& tg = targets[static_cast<std::size_t>(s)];
    if (static_cast<Index>(tg.size()) != per_sample) {
      throw DimensionError("targets not aligned to output grid: " + std::to_string(tg.size()) + " vs " +
                           std::to_string(per_sample));
    }
    std::vector<Index> negs;
    int pos = 0;
    for (Index i = 0; i < per_sample; ++i) {
      const AnchorTarget& t = tg[static_cast<std::size_t>(i)];
      if (t.label == AnchorLabel::kPositive) {
        ++pos;
        cls_idx.push_back(s * per_sample + i);
        cls_lab.push_back(1.0);
        const Index scale = i / cells, cell = i % cells;
        for (int c = 0; c < 4; ++c) {
          reg_idx.push_back((s * 4 * a + 4 * scale + c) * cells + cell);
          reg_tgt.push_back(t.t[static_cast<std::size_t>(c)]);
        }
      } else if (t.label == AnchorLabel::kNegative) {
        negs.push_back(i);
      }
    }
    const std::size_t k =
        std::min(negs.size(), static_cast<std::size_t>(std::max(opt.min_negatives, opt.negative_ratio * pos)));
    const Index base = s * per_sample;
    std::partial_sort(negs.begin(), negs.begin() + static_cast<std::ptrdiff_t>(k), negs.end(),
                      [&](Index p, Index q) {
                        const double lp = logits[static_cast<std::size_t>(base + p)];
                        const double lq = logits[static_cast<std::size_t>(base + q)];
                        return lp != lq ? lp > lq : p < q;
                      });
    for (std::size_t j = 0; j < k; ++j) {
      cls_idx.push_back(base + negs[j]);
      cls_lab.push_back(0.0);
    }
    res.positives += pos;
    res.negatives += static_cast<int>(k);
  }

  if (cls_idx.empty()) {
    res.no_samples = true;
    res.total = scale(sum(out.logits), 0.0);
    return res;
  }
  Tensor cls = bce_with_logits(gather(out.logits, cls_idx), cls_lab);
  res.cls = cls.item();
  Tensor total = scale(cls, opt.lambda);
  if (res.positives > 0) {
    Tensor reg = scale(smooth_l1(gather(out.regression, reg_idx), reg_tgt), 1.0 / res.positives);
    res.reg = reg.item();
    total = add(total, reg);
  }
  res.total = total;
  return res;
}

}  // namespace deeplung
