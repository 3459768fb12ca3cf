#include "deeplung/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "deeplung/checkpoint.hpp"
#include "deeplung/csv.hpp"
#include "deeplung/dpn.hpp"
#include "deeplung/errors.hpp"
#include "deeplung/ops.hpp"
#include "deeplung/optim.hpp"

namespace deeplung {

NoduleCrop crop_patch(const Volume& vol, const Box3& center, int extent) {
  if (extent < 1) throw DomainError("crop extent must be positive");
  const Index cx = std::lround(center.x), cy = std::lround(center.y), cz = std::lround(center.z);
  if (!vol.contains(cz, cy, cx)) throw DomainError("crop center lies outside the volume");
  NoduleCrop crop;
  crop.center = center;
  crop.d = center.d;
  crop.voxels = Volume(extent, extent, extent, 0.0);
  crop.voxels.spacing = vol.spacing;
  const Index half = extent / 2;
  for (Index z = 0; z < extent; ++z)
    for (Index y = 0; y < extent; ++y)
      for (Index x = 0; x < extent; ++x) {
        const Index sz = cz - half + z, sy = cy - half + y, sx = cx - half + x;
        if (vol.contains(sz, sy, sx)) crop.voxels.at(z, y, x) = vol.at(sz, sy, sx);
      }
  return crop;
}

ClassifierConfig ClassifierConfig::full() { return {}; }

ClassifierConfig ClassifierConfig::desk() {
  ClassifierConfig c;
  c.stem_width = 36;
  c.dense_increment = 22;
  c.stage_blocks = {2, 3, 3, 2};
  c.stage_bottleneck = {8, 8, 12, 16};
  c.expected_feature_dim = 256;
  c.epochs = 30;
  c.batch_size = 8;
  c.base_lr = 0.05;
  return c;
}

int ClassifierConfig::total_blocks() const {
  return std::accumulate(stage_blocks.begin(), stage_blocks.end(), 0);
}

void ClassifierConfig::validate() const {
  if (stage_blocks.size() != 4 || stage_bottleneck.size() != 4 || stage_strides.size() != 4) {
    throw SpecError("classifier stage lists need 4 entries");
  }
  for (int b : stage_blocks) {
    if (b < 1) throw SpecError("every classifier stage needs at least one block");
  }
  if (stem_width < 1 || dense_increment < 0) throw SpecError("classifier widths invalid");
  if (dense_increment > stem_width) throw SpecError("dense increment exceeds the stem width");
  if (feature_dim() != expected_feature_dim) {
    throw SpecError("classifier channel arithmetic gives " + std::to_string(feature_dim()) + " features, expected " +
                    std::to_string(expected_feature_dim) + " (stem " + std::to_string(stem_width) + " + " +
                    std::to_string(dense_increment) + " x " + std::to_string(total_blocks()) + " blocks)");
  }
  int reduce = 1;
  for (int s : stage_strides) reduce *= s;
  if (input_extent % reduce != 0) throw SpecError("classifier input extent not divisible by total stride");
  if (epochs < 0 || batch_size < 1) throw SpecError("epochs >= 0 and batch_size >= 1 required");
}

namespace {

const std::set<std::string> kClassifierKeys{
    "preset", "input_extent", "stem_width", "dense_increment", "stage_blocks", "stage_bottleneck", "stage_strides",
    "expected_feature_dim", "epochs", "batch_size", "base_lr", "momentum", "weight_decay", "use_augment",
    "augment_pad", "augment_flip", "zero_patch_probability", "zero_patch_extent"};

}  // namespace

ClassifierConfig ClassifierConfig::from(const KeyValueConfig& kv) {
  kv.check_known(kClassifierKeys);
  const std::string preset = kv.get_string("preset", "desk");
  ClassifierConfig c;
  if (preset == "desk") {
    c = desk();
  } else if (preset == "full") {
    c = full();
  } else {
    throw UsageError("unknown classifier preset " + preset);
  }
  c.input_extent = kv.get_int("input_extent", c.input_extent);
  c.stem_width = kv.get_int("stem_width", c.stem_width);
  c.dense_increment = kv.get_int("dense_increment", c.dense_increment);
  c.stage_blocks = kv.get_ints("stage_blocks", c.stage_blocks);
  c.stage_bottleneck = kv.get_ints("stage_bottleneck", c.stage_bottleneck);
  c.stage_strides = kv.get_ints("stage_strides", c.stage_strides);
  c.expected_feature_dim = kv.get_int("expected_feature_dim", c.expected_feature_dim);
  c.epochs = kv.get_int("epochs", c.epochs);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.base_lr = kv.get_double("base_lr", c.base_lr);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.use_augment = kv.get_bool("use_augment", c.use_augment);
  c.augment.pad = kv.get_int("augment_pad", c.augment.pad);
  c.augment.flip = kv.get_bool("augment_flip", c.augment.flip);
  c.augment.zero_patch_probability = kv.get_double("zero_patch_probability", c.augment.zero_patch_probability);
  c.augment.zero_patch_extent = kv.get_int("zero_patch_extent", c.augment.zero_patch_extent);
  c.validate();
  return c;
}

std::string ClassifierConfig::to_text() const {
  std::ostringstream os;
  os << "input_extent = " << input_extent << '\n'
     << "stem_width = " << stem_width << '\n'
     << "dense_increment = " << dense_increment << '\n'
     << "stage_blocks = " << format_list(stage_blocks) << '\n'
     << "stage_bottleneck = " << format_list(stage_bottleneck) << '\n'
     << "stage_strides = " << format_list(stage_strides) << '\n'
     << "expected_feature_dim = " << expected_feature_dim << '\n'
     << "epochs = " << epochs << '\n'
     << "batch_size = " << batch_size << '\n'
     << "base_lr = " << format_double(base_lr) << '\n'
     << "momentum = " << format_double(momentum) << '\n'
     << "weight_decay = " << format_double(weight_decay) << '\n'
     << "use_augment = " << (use_augment ? "true" : "false") << '\n'
     << "augment_pad = " << augment.pad << '\n'
     << "augment_flip = " << (augment.flip ? "true" : "false") << '\n'
     << "zero_patch_probability = " << format_double(augment.zero_patch_probability) << '\n'
     << "zero_patch_extent = " << augment.zero_patch_extent << '\n';
  return os.str();
}

struct ClassifierNet::Impl {
  ClassifierConfig cfg;
  ConvBnRelu stem;
  std::vector<DpnStack> stages;
  LinearLayer fc;
  TensorRegistry registry;

  Impl(const ClassifierConfig& c, std::uint64_t seed) : cfg(c) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    stem = ConvBnRelu(1, cfg.stem_width, 3, rng, {1, 1});
    Index channels = cfg.stem_width;
    for (std::size_t i = 0; i < 4; ++i) {
      auto base = DualPathBlockSpec::make(channels, cfg.dense_increment, cfg.stage_bottleneck[i]);
      stages.push_back(build_dpn_stack(cfg.stage_blocks[i], base, {cfg.stage_strides[i]}, rng));
      channels = stages.back().out_channels();
    }
    fc = LinearLayer(channels, 1, rng);
    stem.register_tensors(registry, "stem");
    for (std::size_t i = 0; i < stages.size(); ++i) stages[i].register_tensors(registry, "stage" + std::to_string(i + 1));
    fc.register_tensors(registry, "fc");
  }
};

ClassifierNet::ClassifierNet(const ClassifierConfig& config, std::uint64_t seed)
    : impl_(std::make_unique<Impl>(config, seed)) {}
ClassifierNet::~ClassifierNet() = default;
ClassifierNet::ClassifierNet(ClassifierNet&&) noexcept = default;
ClassifierNet& ClassifierNet::operator=(ClassifierNet&&) noexcept = default;

const TensorRegistry& ClassifierNet::tensors() const { return impl_->registry; }
const ClassifierConfig& ClassifierNet::config() const { return impl_->cfg; }

ClassifierOutput ClassifierNet::forward(const Tensor& x, bool training) const {
  const Index e = impl_->cfg.input_extent;
  if (x.rank() != 5 || x.dim(1) != 1 || x.dim(2) != e || x.dim(3) != e || x.dim(4) != e) {
    throw DimensionError("classifier input must be [N, 1, " + std::to_string(e) + ", " + std::to_string(e) + ", " +
                         std::to_string(e) + "], got " + shape_str(x.shape()));
  }
  Tensor h = impl_->stem(x, training);
  for (const auto& s : impl_->stages) h = s(h, training);
  Tensor f = global_avg_pool3d(h);
  return {impl_->fc(f), f};
}

ClassifierNet build_classifier(const ClassifierConfig& config, std::uint64_t seed) {
  return ClassifierNet(config, seed);
}

namespace {

Tensor stack_crops(const std::vector<const Volume*>& vols) {
  const Index e = vols.front()->width;
  std::vector<double> data;
  data.reserve(vols.size() * static_cast<std::size_t>(e * e * e));
  for (const Volume* v : vols) {
    if (v->width != e || v->height != e || v->depth != e) throw DimensionError("crops must share one cubic extent");
    data.insert(data.end(), v->voxels.begin(), v->voxels.end());
  }
  return Tensor(Shape{static_cast<Index>(vols.size()), 1, e, e, e}, std::move(data));
}

}  // namespace

std::vector<Classification> classify_batch(const std::vector<NoduleCrop>& crops, const ClassifierNet& net) {
  std::vector<Classification> out;
  NoGradGuard no_grad;
  for (const auto& c : crops) {
    const Volume norm = normalize(c.voxels, net.stats);
    const ClassifierOutput o = net.forward(stack_crops({&norm}), false);
    Classification r;
    r.logit = o.logits.item();
    r.probability = sigmoid(r.logit);
    r.feature.assign(o.features.data().begin(), o.features.data().end());
    out.push_back(std::move(r));
  }
  return out;
}

Classification classify(const NoduleCrop& crop, const ClassifierNet& net) { return classify_batch({crop}, net).front(); }

NormalizationStats compute_stats(const std::vector<NoduleCrop>& crops) {
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& c : crops) {
    for (double v : c.voxels.voxels) {
      sum += v;
      ++n;
    }
  }
  if (n == 0) throw DomainError("statistics of an empty crop set");
  const double mean = sum / static_cast<double>(n);
  for (const auto& c : crops) {
    for (double v : c.voxels.voxels) sq += (v - mean) * (v - mean);
  }
  const double sd = std::sqrt(sq / static_cast<double>(n));
  return {mean, sd > 0 ? sd : 1.0};
}

std::vector<ClassifierEpoch> train_classifier(ClassifierNet& net, const std::vector<NoduleCrop>& crops,
                                              const std::vector<int>& labels, const TrainClassifierOptions& opt) {
  if (crops.size() != labels.size()) throw DimensionError("one label per crop required");
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  const auto negatives = std::count(labels.begin(), labels.end(), 0);
  if (positives + negatives != static_cast<std::ptrdiff_t>(labels.size())) throw DomainError("labels must be 0 or 1");
  if (positives == 0 || negatives == 0) throw UsageError("classifier training needs both classes present");
  const ClassifierConfig& cfg = net.config();
  net.stats = compute_stats(crops);
  std::mt19937_64 rng(opt.seed);
  Sgd sgd(net.tensors().trainable(), cfg.momentum, cfg.weight_decay);
  std::vector<std::size_t> order(crops.size());
  std::vector<ClassifierEpoch> curve;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, ScheduleTask::kClassifier, cfg.epochs, cfg.base_lr);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Volume> vols;
      std::vector<double> y;
      for (std::size_t i = start; i < stop; ++i) {
        const Volume& src = crops[order[i]].voxels;
        if (cfg.use_augment) {
          vols.push_back(apply_classification_augment(
              src, draw_classification_augment(rng, src.width, cfg.augment), net.stats, cfg.augment));
        } else {
          vols.push_back(normalize(src, net.stats));
        }
        y.push_back(labels[order[i]]);
      }
      std::vector<const Volume*> ptrs;
      for (const auto& v : vols) ptrs.push_back(&v);
      sgd.zero_grad();
      const ClassifierOutput out = net.forward(stack_crops(ptrs), true);
      Tensor loss = bce_with_logits(out.logits, y);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("classifier loss became non-finite at epoch " + std::to_string(epoch));
      }
      loss.backward();
      sgd.step(lr);
      total += value;
      ++batches;
    }
    curve.push_back({epoch, total / batches});
    if (opt.on_epoch) opt.on_epoch(curve.back());
  }
  return curve;
}

namespace {

TensorRegistry with_stats(const ClassifierNet& net, Tensor& mean, Tensor& sd) {
  TensorRegistry reg = net.tensors();
  reg.add("norm.mean", mean);
  reg.add("norm.std", sd);
  return reg;
}

}  // namespace

void save_classifier(const std::string& path, const ClassifierNet& net) {
  Tensor mean = Tensor::scalar(net.stats.mean), sd = Tensor::scalar(net.stats.stddev);
  save_checkpoint(path, with_stats(net, mean, sd));
}

void load_classifier(const std::string& path, ClassifierNet& net) {
  Tensor mean = Tensor::scalar(0.0), sd = Tensor::scalar(1.0);
  load_checkpoint(path, with_stats(net, mean, sd));
  net.stats = {mean.item(), sd.item()};
}

std::string format_feature_csv(const std::vector<FeatureRow>& rows) {
  std::ostringstream os;
  const std::size_t f = rows.empty() ? 0 : rows.front().feature.size();
  os << "series_id,nodule_id";
  for (std::size_t i = 0; i < f; ++i) os << ",f" << i;
  os << ",d\n";
  for (const auto& r : rows) {
    if (r.feature.size() != f) throw DimensionError("feature rows differ in length");
    os << r.series_id << ',' << r.nodule_id;
    for (double v : r.feature) os << ',' << format_number(v);
    os << ',' << format_number(r.d) << '\n';
  }
  return os.str();
}

std::vector<FeatureRow> parse_feature_csv(const std::string& text) {
  const CsvTable t = parse_csv(text);
  const std::size_t sid = t.column("series_id"), nid = t.column("nodule_id"), cd = t.column("d");
  std::vector<std::size_t> fcols;
  for (std::size_t i = 0;; ++i) {
    auto c = t.find_column("f" + std::to_string(i));
    if (!c) break;
    fcols.push_back(*c);
  }
  std::vector<FeatureRow> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    FeatureRow row;
    row.series_id = t.rows[r][sid];
    row.nodule_id = static_cast<int>(t.number(r, nid));
    for (std::size_t c : fcols) row.feature.push_back(t.number(r, c));
    row.d = t.number(r, cd);
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace deeplung
