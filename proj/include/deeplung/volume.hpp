#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deeplung/tensor.hpp"

namespace deeplung {

/// Scalar grid stored z-major (x fastest), matching MetaImage raw order.
/// Spacing and origin are in millimetres, (x, y, z) order.
struct Volume {
  Index depth = 0, height = 0, width = 0;
  std::vector<double> voxels;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> origin{0.0, 0.0, 0.0};
  std::vector<std::uint8_t> mask;  // empty, or one byte per voxel (nonzero = foreground)

  Volume() = default;
  Volume(Index d, Index h, Index w, double fill = 0.0);

  Index size() const { return depth * height * width; }
  Index index(Index z, Index y, Index x) const { return (z * height + y) * width + x; }
  double& at(Index z, Index y, Index x) { return voxels[static_cast<std::size_t>(index(z, y, x))]; }
  double at(Index z, Index y, Index x) const { return voxels[static_cast<std::size_t>(index(z, y, x))]; }
  bool contains(Index z, Index y, Index x) const {
    return z >= 0 && y >= 0 && x >= 0 && z < depth && y < height && x < width;
  }
  bool has_mask() const { return !mask.empty(); }

  /// [1, 1, D, H, W] copy.
  Tensor to_tensor() const;
};

enum class ElementType { kShort, kFloat, kUChar, kDouble };

const char* element_type_name(ElementType t);

/// Parses MetaImage header text plus the raw payload it describes. Required
/// keys: NDims (= 3), DimSize, ElementSpacing, Offset, ElementType,
/// ElementDataFile. Keys are case-sensitive.
Volume parse_mhd(const std::string& header, std::span<const std::uint8_t> raw);

struct MhdHeader {
  std::array<Index, 3> dim_size{};  // x, y, z
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> offset{0.0, 0.0, 0.0};
  ElementType element_type = ElementType::kFloat;
  bool big_endian = false;
  std::string data_file;
};

MhdHeader parse_mhd_header(const std::string& header);

/// Reads `path` and the ElementDataFile it names (resolved next to the header).
Volume read_mhd(const std::string& path);
/// Writes `<path>` and a sibling `.raw`. Values are rounded for integer types.
void write_mhd(const std::string& path, const Volume& vol, ElementType type);
/// Loads a MET_UCHAR mask and attaches it to `vol`; extents must match.
void attach_mask(Volume& vol, const std::string& mask_path);

inline constexpr double kHuMin = -1200.0;
inline constexpr double kHuMax = 600.0;

/// Clip to [-1200, 600] HU, map linearly to [0, 1], zero masked-out voxels.
Volume preprocess(const Volume& vol);
double preprocess_hu(double hu);
/// Inverse of the linear map, used to emit synthetic HU volumes.
double unpreprocess(double value);

using Vec3 = std::array<double, 3>;  // (x, y, z)

Vec3 world_to_voxel(const Vec3& world, const Volume& vol);
Vec3 voxel_to_world(const Vec3& voxel, const Volume& vol);

/// Trilinear sample at continuous voxel coordinates; `fill` outside.
double sample_trilinear(const Volume& vol, double z, double y, double x, double fill = 0.0);

/// Trilinear resampling to `target_spacing` mm per axis; mask resampled with
/// nearest neighbour.
Volume resample_isotropic(const Volume& vol, double target_spacing = 1.0);

}  // namespace deeplung
