#include "deeplung/detect_post.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "deeplung/csv.hpp"
#include "deeplung/errors.hpp"
#include "deeplung/ops.hpp"

namespace deeplung {

Detection make_detection(const Box3& box, double logit) { return {box, sigmoid(logit), logit}; }

std::vector<Index> tile_offsets(Index extent, int patch_extent, int overlap) {
  if (patch_extent < 1) throw DomainError("patch extent must be positive");
  if (overlap < 0 || overlap >= patch_extent) throw DomainError("overlap must lie in [0, patch extent)");
  std::vector<Index> out{0};
  const Index step = patch_extent - overlap;
  while (out.back() + patch_extent < extent) out.push_back(out.back() + step);
  return out;
}

std::vector<VolumePatch> split_volume(const Volume& vol, int patch_extent, int overlap) {
  const Index ext[3] = {vol.width, vol.height, vol.depth};
  std::array<std::vector<Index>, 3> offs, lo, hi;
  for (int a = 0; a < 3; ++a) {
    offs[a] = tile_offsets(ext[a], patch_extent, overlap);
    const std::size_t k = offs[a].size();
    lo[a].resize(k);
    hi[a].resize(k);
    for (std::size_t i = 0; i < k; ++i) lo[a][i] = i == 0 ? 0 : offs[a][i] + overlap / 2;
    for (std::size_t i = 0; i < k; ++i) hi[a][i] = i + 1 == k ? ext[a] : lo[a][i + 1];
  }
  std::vector<VolumePatch> out;
  for (std::size_t iz = 0; iz < offs[2].size(); ++iz)
    for (std::size_t iy = 0; iy < offs[1].size(); ++iy)
      for (std::size_t ix = 0; ix < offs[0].size(); ++ix) {
        VolumePatch p;
        p.offset = {offs[0][ix], offs[1][iy], offs[2][iz]};
        p.interior_lo = {lo[0][ix], lo[1][iy], lo[2][iz]};
        p.interior_hi = {hi[0][ix], hi[1][iy], hi[2][iz]};
        p.patch = Volume(patch_extent, patch_extent, patch_extent, 0.0);
        p.patch.spacing = vol.spacing;
        for (Index z = 0; z < patch_extent; ++z)
          for (Index y = 0; y < patch_extent; ++y)
            for (Index x = 0; x < patch_extent; ++x) {
              const Index sz = z + p.offset[2], sy = y + p.offset[1], sx = x + p.offset[0];
              if (vol.contains(sz, sy, sx)) p.patch.at(z, y, x) = vol.at(sz, sy, sx);
            }
        out.push_back(std::move(p));
      }
  return out;
}

std::vector<Detection> decode_patch(const DetectorOutput& out, const std::array<double, 3>& offset,
                                    const std::vector<double>& scales, Index n) {
  const Index a = out.logits.dim(1);
  if (static_cast<Index>(scales.size()) != a) throw DimensionError("anchor scale count does not match logits");
  const int gd = static_cast<int>(out.logits.dim(2)), gh = static_cast<int>(out.logits.dim(3)),
            gw = static_cast<int>(out.logits.dim(4));
  const Index cells = static_cast<Index>(gd) * gh * gw;
  const auto anchors = generate_anchors({gd, gh, gw}, kDetectorStride, scales);
  const auto logits = out.logits.data();
  const auto reg = out.regression.data();
  std::vector<Detection> dets;
  dets.reserve(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const Index scale = static_cast<Index>(i) / cells, cell = static_cast<Index>(i) % cells;
    BoxDelta t{};
    for (int c = 0; c < 4; ++c) {
      t[static_cast<std::size_t>(c)] = reg[static_cast<std::size_t>((n * 4 * a + 4 * scale + c) * cells + cell)];
    }
    Box3 b = decode_box(t, anchors[i].box);
    b.x += offset[0];
    b.y += offset[1];
    b.z += offset[2];
    dets.push_back(make_detection(b, logits[static_cast<std::size_t>(n * a * cells + static_cast<Index>(i))]));
  }
  return dets;
}

std::vector<Detection> filter_by_probability(const std::vector<Detection>& dets, double logit_threshold) {
  std::vector<Detection> out;
  for (const auto& d : dets) {
    if (d.logit > logit_threshold) out.push_back(d);
  }
  return out;
}

bool detection_before(const Detection& a, const Detection& b) {
  if (a.probability != b.probability) return a.probability > b.probability;
  if (a.box.x != b.box.x) return a.box.x < b.box.x;
  if (a.box.y != b.box.y) return a.box.y < b.box.y;
  if (a.box.z != b.box.z) return a.box.z < b.box.z;
  return a.box.d < b.box.d;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<Detection> sorted = dets;
  std::stable_sort(sorted.begin(), sorted.end(), detection_before);
  std::vector<Detection> kept;
  for (const auto& d : sorted) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (iou(d.box, k.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

DetectOptions detect_options(const DetectorConfig& cfg) {
  return {cfg.input_extent, cfg.patch_overlap, cfg.logit_threshold, cfg.nms_iou};
}

std::vector<Detection> detect_volume(const DetectorNet& net, const Volume& vol, const DetectOptions& opt) {
  const auto& scales = net.config().anchor_scales;
  std::vector<Detection> merged;
  NoGradGuard no_grad;
  for (const auto& p : split_volume(vol, opt.patch_extent, opt.overlap)) {
    const DetectorOutput out = net.forward(p.patch.to_tensor());
    const std::array<double, 3> off{static_cast<double>(p.offset[0]), static_cast<double>(p.offset[1]),
                                    static_cast<double>(p.offset[2])};
    for (const auto& d : filter_by_probability(decode_patch(out, off, scales), opt.logit_threshold)) {
      const double c[3] = {d.box.x, d.box.y, d.box.z};
      bool inside = true;
      for (int a = 0; a < 3; ++a) {
        inside = inside && c[a] >= p.interior_lo[static_cast<std::size_t>(a)] - 0.5 &&
                 c[a] < p.interior_hi[static_cast<std::size_t>(a)] - 0.5;
      }
      if (inside) merged.push_back(d);
    }
  }
  return nms(merged, opt.nms_iou);
}

std::string format_detection_csv(const std::vector<SeriesDetections>& all) {
  std::ostringstream os;
  os << "series_id,x,y,z,d,probability\n";
  for (const auto& s : all) {
    for (const auto& d : s.detections) {
      os << s.series_id << ',' << format_number(d.box.x) << ',' << format_number(d.box.y) << ','
         << format_number(d.box.z) << ',' << format_number(d.box.d) << ',' << format_number(d.probability) << '\n';
    }
  }
  return os.str();
}

std::vector<SeriesDetections> parse_detection_csv(const std::string& text) {
  const CsvTable t = parse_csv(text);
  const std::size_t sid = t.column("series_id"), cx = t.column("x"), cy = t.column("y"), cz = t.column("z"),
                    cd = t.column("d"), cp = t.column("probability");
  std::vector<SeriesDetections> out;
  std::map<std::string, std::size_t> where;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string& id = t.rows[r][sid];
    auto it = where.find(id);
    if (it == where.end()) {
      it = where.emplace(id, out.size()).first;
      out.push_back({id, {}});
    }
    Detection d;
    d.box = {t.number(r, cx), t.number(r, cy), t.number(r, cz), t.number(r, cd)};
    d.probability = t.number(r, cp);
    if (!(d.probability >= 0 && d.probability <= 1)) {
      throw ParseError("detection row " + std::to_string(r + 2) + ": probability outside [0, 1]");
    }
    const double p = std::clamp(d.probability, 1e-300, 1 - 1e-16);
    d.logit = std::log(p / (1 - p));
    out[it->second].detections.push_back(d);
  }
  return out;
}

}  // namespace deeplung
