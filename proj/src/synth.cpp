#include "deeplung/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "deeplung/errors.hpp"

namespace deeplung {

namespace {

constexpr double kBackgroundMax = 0.3;
constexpr int kMaxPlacementTries = 2000;

std::mt19937_64 case_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

std::string series_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%04d", prefix, i);
  return buf;
}

Volume to_hu(const Volume& pre) {
  Volume out = pre;
  for (double& v : out.voxels) v = std::round(unpreprocess(v));
  return out;
}

}  // namespace

Volume synth_background(Index extent, std::mt19937_64& rng) {
  constexpr int kCell = 8;
  const Index coarse = extent / kCell + 2;
  Volume grid(coarse, coarse, coarse);
  std::uniform_real_distribution<double> u(0.0, kBackgroundMax);
  for (double& v : grid.voxels) v = u(rng);
  Volume out(extent, extent, extent);
  std::uniform_real_distribution<double> fine(-0.02, 0.02);
  for (Index z = 0; z < extent; ++z)
    for (Index y = 0; y < extent; ++y)
      for (Index x = 0; x < extent; ++x) {
        const double v = sample_trilinear(grid, static_cast<double>(z) / kCell, static_cast<double>(y) / kCell,
                                          static_cast<double>(x) / kCell);
        out.at(z, y, x) = std::clamp(v + fine(rng), 0.0, kBackgroundMax);
      }
  return out;
}

void render_nodule(Volume& vol, const SynthNodule& nodule, std::mt19937_64& rng) {
  const Box3& b = nodule.box;
  const double r = b.d / 2;
  const double sigma = r / 2;
  const double peak = 0.9;
  struct Spike {
    double dx, dy, dz, length;
  };
  std::vector<Spike> spikes;
  if (nodule.malignant) {
    std::normal_distribution<double> g(0, 1);
    std::uniform_real_distribution<double> len(1.4, 1.9);
    const int count = std::uniform_int_distribution<int>(7, 10)(rng);
    for (int i = 0; i < count; ++i) {
      double dx = g(rng), dy = g(rng), dz = g(rng);
      const double n = std::sqrt(dx * dx + dy * dy + dz * dz) + 1e-12;
      spikes.push_back({dx / n, dy / n, dz / n, len(rng) * r});
    }
  }
  const double reach = nodule.malignant ? 2.0 * r + 1 : 2.0 * r;
  const Index z0 = std::max<Index>(0, static_cast<Index>(std::floor(b.z - reach)));
  const Index z1 = std::min<Index>(vol.depth - 1, static_cast<Index>(std::ceil(b.z + reach)));
  const Index y0 = std::max<Index>(0, static_cast<Index>(std::floor(b.y - reach)));
  const Index y1 = std::min<Index>(vol.height - 1, static_cast<Index>(std::ceil(b.y + reach)));
  const Index x0 = std::max<Index>(0, static_cast<Index>(std::floor(b.x - reach)));
  const Index x1 = std::min<Index>(vol.width - 1, static_cast<Index>(std::ceil(b.x + reach)));
  for (Index z = z0; z <= z1; ++z)
    for (Index y = y0; y <= y1; ++y)
      for (Index x = x0; x <= x1; ++x) {
        const double px = x - b.x, py = y - b.y, pz = z - b.z;
        const double rho2 = px * px + py * py + pz * pz;
        double v = peak * std::exp(-rho2 / (2 * sigma * sigma));
        for (const Spike& s : spikes) {
          const double t = px * s.dx + py * s.dy + pz * s.dz;
          if (t < 0.3 * r || t > s.length) continue;
          const double perp2 = std::max(0.0, rho2 - t * t);
          const double taper = 1.0 - 0.3 * (t / s.length);
          v = std::max(v, 0.85 * taper * std::exp(-perp2 / (2 * 1.0 * 1.0)));
        }
        double& dst = vol.at(z, y, x);
        dst = std::max(dst, std::min(v, 1.0));
      }
}

std::vector<int> synth_scores(bool malignant, std::mt19937_64& rng) {
  const int readers = std::uniform_int_distribution<int>(2, 4)(rng);
  std::uniform_int_distribution<int> pick(0, 1);
  std::vector<int> s(4, 0);
  for (int i = 0; i < readers; ++i) s[static_cast<std::size_t>(i)] = malignant ? 4 + pick(rng) : 1 + pick(rng);
  return s;
}

SynthDataset synth_generate(int n_volumes, int extent, const NoduleSpec& spec, std::uint64_t seed) {
  if (n_volumes < 0) throw UsageError("volume count must be >= 0");
  if (!(spec.d_min > 0 && spec.d_min <= spec.d_max)) throw SpecError("nodule diameter range invalid");
  if (extent < 2 * spec.d_max) throw SpecError("extent must be at least twice the largest nodule diameter");
  if (spec.min_per_volume < 0 || spec.min_per_volume > spec.max_per_volume) throw SpecError("nodule count range invalid");
  SynthDataset out;
  for (int i = 0; i < n_volumes; ++i) {
    auto rng = case_rng(seed, static_cast<std::uint64_t>(i), 0);
    SynthCase c;
    c.series_id = series_name("synth", i);
    Volume pre = synth_background(extent, rng);
    const int count = std::uniform_int_distribution<int>(spec.min_per_volume, spec.max_per_volume)(rng);
    std::uniform_real_distribution<double> dia(spec.d_min, spec.d_max);
    std::bernoulli_distribution malignant(spec.malignant_fraction);
    for (int k = 0; k < count; ++k) {
      SynthNodule n;
      n.box.d = dia(rng);
      n.malignant = malignant(rng);
      const double margin = n.box.d / 2 + 2;
      std::uniform_real_distribution<double> pos(margin, extent - 1 - margin);
      bool placed = false;
      for (int t = 0; t < kMaxPlacementTries && !placed; ++t) {
        n.box.x = pos(rng);
        n.box.y = pos(rng);
        n.box.z = pos(rng);
        placed = std::all_of(c.nodules.begin(), c.nodules.end(), [&](const SynthNodule& o) {
          const double dx = o.box.x - n.box.x, dy = o.box.y - n.box.y, dz = o.box.z - n.box.z;
          return std::sqrt(dx * dx + dy * dy + dz * dz) > 0.9 * (o.box.d + n.box.d) + 4;
        });
      }
      if (!placed) throw GenerationError("could not place nodule " + std::to_string(k) + " in " + c.series_id);
      render_nodule(pre, n, rng);
      c.nodules.push_back(n);
      AnnotationRecord rec;
      rec.series_id = c.series_id;
      rec.world = {n.box.x, n.box.y, n.box.z};
      rec.diameter_mm = n.box.d;
      rec.scores = synth_scores(n.malignant, rng);
      out.manifest.push_back(rec);
    }
    c.volume = to_hu(pre);
    out.cases.push_back(std::move(c));
  }
  return out;
}

std::vector<SynthCase> synth_crops(int n, int extent, std::uint64_t seed, const NoduleSpec& spec) {
  std::vector<SynthCase> out;
  for (int i = 0; i < n; ++i) {
    auto rng = case_rng(seed, static_cast<std::uint64_t>(i), 1);
    SynthCase c;
    c.series_id = series_name("crop", i);
    Volume pre = synth_background(extent, rng);
    SynthNodule nod;
    nod.malignant = (i % 2) == 1;
    nod.box.d = std::uniform_real_distribution<double>(spec.d_min, spec.d_max)(rng);
    std::uniform_real_distribution<double> jitter(-1.5, 1.5);
    const double c0 = (extent - 1) / 2.0;
    nod.box.x = c0 + jitter(rng);
    nod.box.y = c0 + jitter(rng);
    nod.box.z = c0 + jitter(rng);
    render_nodule(pre, nod, rng);
    c.volume = to_hu(pre);
    c.nodules.push_back(nod);
    out.push_back(std::move(c));
  }
  return out;
}

void write_synth_dataset(const std::string& dir, const SynthDataset& data) {
  std::filesystem::create_directories(dir);
  for (const auto& c : data.cases) {
    write_mhd((std::filesystem::path(dir) / (c.series_id + ".mhd")).string(), c.volume, ElementType::kShort);
  }
  write_manifest((std::filesystem::path(dir) / "manifest.csv").string(), data.manifest);
}

}  // namespace deeplung
