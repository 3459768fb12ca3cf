#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "deeplung/csv.hpp"
#include "deeplung/detector.hpp"
#include "deeplung/errors.hpp"
#include "deeplung/optim.hpp"

namespace deeplung {

LossOptions loss_options(const DetectorConfig& cfg) {
  return {cfg.lambda, cfg.negative_ratio, cfg.min_negatives};
}

DetectionSample training_patch(const DetectionSample& s, int extent, std::mt19937_64& rng) {
  const Volume& v = s.volume;
  if (v.depth == extent && v.height == extent && v.width == extent) return s;
  auto corner = [&](Index e) -> Index {
    if (e <= extent) return 0;
    return std::uniform_int_distribution<Index>(0, e - extent)(rng);
  };
  const Index cz = corner(v.depth), cy = corner(v.height), cx = corner(v.width);
  DetectionSample out;
  out.series_id = s.series_id;
  out.volume = Volume(extent, extent, extent);
  out.volume.spacing = v.spacing;
  for (Index z = 0; z < extent; ++z)
    for (Index y = 0; y < extent; ++y)
      for (Index x = 0; x < extent; ++x) {
        if (v.contains(z + cz, y + cy, x + cx)) out.volume.at(z, y, x) = v.at(z + cz, y + cy, x + cx);
      }
  for (const auto& b : s.boxes) {
    Box3 nb{b.x - cx, b.y - cy, b.z - cz, b.d};
    if (nb.x >= 0 && nb.y >= 0 && nb.z >= 0 && nb.x < extent && nb.y < extent && nb.z < extent) {
      out.boxes.push_back(nb);
    }
  }
  return out;
}

std::vector<EpochLoss> train_detector(DetectorNet& net, const std::vector<DetectionSample>& data,
                                      const TrainDetectorOptions& opt) {
  if (data.empty()) throw UsageError("detector training needs a nonempty dataset");
  const DetectorConfig& cfg = net.config();
  std::mt19937_64 rng(opt.seed);
  Sgd sgd(net.tensors().trainable(), cfg.momentum, cfg.weight_decay);
  const int e = cfg.input_extent;
  const Int3 grid = DetectorNet::grid_for({e, e, e});
  const auto anchors = generate_anchors(grid, kDetectorStride, cfg.anchor_scales);
  const DetectionAugmentOptions aug{cfg.flip_augment, cfg.scale_augment, cfg.scale_min, cfg.scale_max};
  const LossOptions lopt = loss_options(cfg);

  std::vector<std::size_t> order(data.size());
  std::vector<EpochLoss> curve;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, ScheduleTask::kDetector, cfg.epochs, cfg.base_lr);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    EpochLoss acc;
    acc.epoch = epoch;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const Index n = static_cast<Index>(stop - start);
      std::vector<double> input;
      input.reserve(static_cast<std::size_t>(n * e * e * e));
      std::vector<std::vector<AnchorTarget>> targets;
      for (std::size_t i = start; i < stop; ++i) {
        DetectionSample s = training_patch(data[order[i]], e, rng);
        auto [vol, boxes] = apply_detection_augment(s.volume, s.boxes, draw_detection_augment(rng, aug));
        input.insert(input.end(), vol.voxels.begin(), vol.voxels.end());
        targets.push_back(assign_targets(anchors, boxes, cfg.assign_options()));
      }
      Tensor x(Shape{n, 1, e, e, e}, std::move(input));
      sgd.zero_grad();
      DetectorOutput out = net.forward(x, true, rng);
      LossBreakdown loss = detector_loss(out, targets, lopt);
      const double total = loss.total.item();
      if (!std::isfinite(total)) {
        std::ostringstream msg;
        msg << "detector loss became non-finite at epoch " << epoch << " (cls " << loss.cls << ", reg " << loss.reg
            << ", lr " << lr << ")";
        throw NumericError(msg.str());
      }
      if (!loss.no_samples) {
        loss.total.backward();
        sgd.step(lr);
      }
      acc.total += total;
      acc.cls += loss.cls;
      acc.reg += loss.reg;
      ++batches;
    }
    acc.total /= batches;
    acc.cls /= batches;
    acc.reg /= batches;
    curve.push_back(acc);
    sgd.state().epoch = epoch + 1;
    if (opt.on_epoch) opt.on_epoch(acc);
    if (cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0 && opt.on_checkpoint) {
      opt.on_checkpoint(epoch + 1, net);
    }
  }
  return curve;
}

std::string format_loss_csv(const std::vector<EpochLoss>& curve) {
  std::ostringstream os;
  os << "epoch,total,cls,reg\n";
  for (const auto& l : curve) {
    os << l.epoch << ',' << format_number(l.total) << ',' << format_number(l.cls) << ',' << format_number(l.reg)
       << '\n';
  }
  return os.str();
}

}  // namespace deeplung
