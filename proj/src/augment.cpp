#include "deeplung/augment.hpp"

#include "deeplung/errors.hpp"

namespace deeplung {

DetectionAugmentDraw draw_detection_augment(std::mt19937_64& rng, const DetectionAugmentOptions& opt) {
  DetectionAugmentDraw d;
  std::bernoulli_distribution coin(0.5);
  for (auto& f : d.flip) f = opt.flip && coin(rng);
  if (opt.scale) d.scale = std::uniform_real_distribution<double>(opt.scale_min, opt.scale_max)(rng);
  return d;
}

Box3 augment_box(const Box3& box, const Volume& vol, const DetectionAugmentDraw& draw) {
  const double ext[3] = {static_cast<double>(vol.width), static_cast<double>(vol.height),
                         static_cast<double>(vol.depth)};
  double p[3] = {box.x, box.y, box.z};
  for (int a = 0; a < 3; ++a) {
    if (draw.flip[static_cast<std::size_t>(a)]) p[a] = ext[a] - 1 - p[a];
    const double c = (ext[a] - 1) / 2;
    p[a] = c + (p[a] - c) * draw.scale;
  }
  return {p[0], p[1], p[2], box.d * draw.scale};
}

std::pair<Volume, std::vector<Box3>> apply_detection_augment(const Volume& vol, const std::vector<Box3>& boxes,
                                                             const DetectionAugmentDraw& draw) {
  if (!(draw.scale > 0)) throw DomainError("augmentation scale must be positive");
  Volume out = vol;
  const double cz = (vol.depth - 1) / 2.0, cy = (vol.height - 1) / 2.0, cx = (vol.width - 1) / 2.0;
  const bool scaled = draw.scale != 1.0;
  for (Index z = 0; z < vol.depth; ++z)
    for (Index y = 0; y < vol.height; ++y)
      for (Index x = 0; x < vol.width; ++x) {
        // Output voxel -> pre-scale position -> pre-flip source.
        double sz = z, sy = y, sx = x;
        if (scaled) {
          sz = cz + (z - cz) / draw.scale;
          sy = cy + (y - cy) / draw.scale;
          sx = cx + (x - cx) / draw.scale;
        }
        if (draw.flip[2]) sz = vol.depth - 1 - sz;
        if (draw.flip[1]) sy = vol.height - 1 - sy;
        if (draw.flip[0]) sx = vol.width - 1 - sx;
        double v;
        if (scaled) {
          v = sample_trilinear(vol, sz, sy, sx, 0.0);
        } else {
          v = vol.at(static_cast<Index>(sz), static_cast<Index>(sy), static_cast<Index>(sx));
        }
        out.at(z, y, x) = v;
        if (vol.has_mask()) {
          const Index nz = std::lround(sz), ny = std::lround(sy), nx = std::lround(sx);
          out.mask[static_cast<std::size_t>(out.index(z, y, x))] =
              vol.contains(nz, ny, nx) ? vol.mask[static_cast<std::size_t>(vol.index(nz, ny, nx))] : 0;
        }
      }
  std::vector<Box3> out_boxes;
  for (const auto& b : boxes) {
    const Box3 nb = augment_box(b, vol, draw);
    if (nb.x >= -0.5 && nb.y >= -0.5 && nb.z >= -0.5 && nb.x <= vol.width - 0.5 && nb.y <= vol.height - 0.5 &&
        nb.z <= vol.depth - 0.5) {
      out_boxes.push_back(nb);
    }
  }
  return {std::move(out), std::move(out_boxes)};
}

std::pair<Volume, std::vector<Box3>> augment_detection(const Volume& vol, const std::vector<Box3>& boxes,
                                                       std::uint64_t seed, const DetectionAugmentOptions& opt) {
  std::mt19937_64 rng(seed);
  return apply_detection_augment(vol, boxes, draw_detection_augment(rng, opt));
}

ClassificationAugmentDraw draw_classification_augment(std::mt19937_64& rng, Index extent,
                                                      const ClassificationAugmentOptions& opt) {
  ClassificationAugmentDraw d;
  std::uniform_int_distribution<int> off(0, 2 * opt.pad);
  for (auto& o : d.offset) o = off(rng);
  std::bernoulli_distribution coin(0.5);
  for (auto& f : d.flip) f = opt.flip && coin(rng);
  d.zero_patch = std::bernoulli_distribution(opt.zero_patch_probability)(rng);
  std::uniform_int_distribution<int> corner(0, static_cast<int>(extent) - opt.zero_patch_extent);
  for (auto& c : d.patch_corner) c = corner(rng);
  return d;
}

Volume normalize(const Volume& crop, const NormalizationStats& stats) {
  if (!(stats.stddev > 0)) throw DomainError("normalization stddev must be positive");
  Volume out = crop;
  for (double& v : out.voxels) v = (v - stats.mean) / stats.stddev;
  return out;
}

Volume apply_classification_augment(const Volume& crop, const ClassificationAugmentDraw& draw,
                                    const NormalizationStats& stats, const ClassificationAugmentOptions& opt) {
  if (!(stats.stddev > 0)) throw DomainError("normalization stddev must be positive");
  Volume out(crop.depth, crop.height, crop.width);
  out.spacing = crop.spacing;
  out.origin = crop.origin;
  const Index ext[3] = {crop.width, crop.height, crop.depth};
  for (Index z = 0; z < crop.depth; ++z)
    for (Index y = 0; y < crop.height; ++y)
      for (Index x = 0; x < crop.width; ++x) {
        Index q[3] = {x, y, z};
        for (int a = 0; a < 3; ++a) {
          if (draw.flip[static_cast<std::size_t>(a)]) q[a] = ext[a] - 1 - q[a];
          // padded coordinate -> source coordinate
          q[a] = q[a] + draw.offset[static_cast<std::size_t>(a)] - opt.pad;
        }
        const double v = crop.contains(q[2], q[1], q[0]) ? crop.at(q[2], q[1], q[0]) : 0.0;
        out.at(z, y, x) = (v - stats.mean) / stats.stddev;
      }
  if (draw.zero_patch) {
    const int e = opt.zero_patch_extent;
    const auto& c = draw.patch_corner;
    for (Index z = c[2]; z < c[2] + e; ++z)
      for (Index y = c[1]; y < c[1] + e; ++y)
        for (Index x = c[0]; x < c[0] + e; ++x) {
          if (out.contains(z, y, x)) out.at(z, y, x) = 0.0;
        }
  }
  return out;
}

Volume augment_classification(const Volume& crop, std::uint64_t seed, const NormalizationStats& stats,
                              const ClassificationAugmentOptions& opt) {
  std::mt19937_64 rng(seed);
  return apply_classification_augment(crop, draw_classification_augment(rng, crop.width, opt), stats, opt);
}

}  // namespace deeplung
