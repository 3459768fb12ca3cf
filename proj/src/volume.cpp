#include "deeplung/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "deeplung/errors.hpp"

namespace deeplung {

namespace fs = std::filesystem;

Volume::Volume(Index d, Index h, Index w, double fill)
    : depth(d), height(h), width(w), voxels(static_cast<std::size_t>(d * h * w), fill) {}

Tensor Volume::to_tensor() const { return Tensor(Shape{1, 1, depth, height, width}, voxels); }

const char* element_type_name(ElementType t) {
  switch (t) {
    case ElementType::kShort:
      return "MET_SHORT";
    case ElementType::kFloat:
      return "MET_FLOAT";
    case ElementType::kUChar:
      return "MET_UCHAR";
    case ElementType::kDouble:
      return "MET_DOUBLE";
  }
  return "";
}

namespace {

std::size_t element_size(ElementType t) {
  switch (t) {
    case ElementType::kShort:
      return 2;
    case ElementType::kFloat:
      return 4;
    case ElementType::kUChar:
      return 1;
    case ElementType::kDouble:
      return 8;
  }
  return 0;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <std::size_t N>
std::array<double, N> parse_numbers(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!(is >> out[i])) throw ParseError("MHD key " + key + ": expected " + std::to_string(N) + " numbers");
  }
  std::string extra;
  if (is >> extra) throw ParseError("MHD key " + key + ": trailing value '" + extra + "'");
  return out;
}

std::uint64_t load_le(const std::uint8_t* p, std::size_t n, bool big_endian) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = big_endian ? n - 1 - i : i;
    v |= std::uint64_t{p[src]} << (8 * i);
  }
  return v;
}

void store_le(std::vector<char>& out, std::uint64_t v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ParseError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

MhdHeader parse_mhd_header(const std::string& header) {
  std::map<std::string, std::string> kv;
  std::istringstream lines(header);
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto require = [&kv](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError("MHD header missing key " + key);
    return it->second;
  };

  MhdHeader h;
  if (require("NDims") != "3") throw ParseError("MHD key NDims: only 3-D volumes are supported");
  const auto dims = parse_numbers<3>("DimSize", require("DimSize"));
  for (int i = 0; i < 3; ++i) {
    if (dims[i] < 1 || dims[i] != std::floor(dims[i])) throw ParseError("MHD key DimSize: invalid extent");
    h.dim_size[i] = static_cast<Index>(dims[i]);
  }
  h.spacing = parse_numbers<3>("ElementSpacing", require("ElementSpacing"));
  for (double s : h.spacing) {
    if (!(s > 0)) throw ParseError("MHD key ElementSpacing: spacing must be positive");
  }
  h.offset = parse_numbers<3>("Offset", require("Offset"));
  const std::string& type = require("ElementType");
  if (type == "MET_SHORT") {
    h.element_type = ElementType::kShort;
  } else if (type == "MET_FLOAT") {
    h.element_type = ElementType::kFloat;
  } else if (type == "MET_UCHAR") {
    h.element_type = ElementType::kUChar;
  } else if (type == "MET_DOUBLE") {
    h.element_type = ElementType::kDouble;
  } else {
    throw ParseError("MHD key ElementType: unsupported type " + type);
  }
  h.data_file = require("ElementDataFile");
  for (const char* key : {"BinaryDataByteOrderMSB", "ElementByteOrderMSB"}) {
    auto it = kv.find(key);
    if (it != kv.end()) h.big_endian = it->second == "True" || it->second == "true";
  }
  if (auto it = kv.find("CompressedData"); it != kv.end() && (it->second == "True" || it->second == "true")) {
    throw ParseError("MHD key CompressedData: compressed payloads are not supported");
  }
  return h;
}

namespace {

Volume decode_payload(const MhdHeader& h, std::span<const std::uint8_t> raw) {
  const Index nx = h.dim_size[0], ny = h.dim_size[1], nz = h.dim_size[2];
  const std::size_t esize = element_size(h.element_type);
  const std::size_t expected = static_cast<std::size_t>(nx * ny * nz) * esize;
  if (raw.size() != expected) {
    throw ParseError("MHD payload size mismatch for DimSize: expected " + std::to_string(expected) +
                     " bytes, got " + std::to_string(raw.size()));
  }
  Volume vol(nz, ny, nx);
  vol.spacing = h.spacing;
  vol.origin = h.offset;
  const std::uint8_t* p = raw.data();
  for (std::size_t i = 0; i < vol.voxels.size(); ++i, p += esize) {
    const std::uint64_t bits = load_le(p, esize, h.big_endian);
    switch (h.element_type) {
      case ElementType::kShort:
        vol.voxels[i] = static_cast<double>(static_cast<std::int16_t>(bits));
        break;
      case ElementType::kUChar:
        vol.voxels[i] = static_cast<double>(bits);
        break;
      case ElementType::kFloat:
        vol.voxels[i] = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)));
        break;
      case ElementType::kDouble:
        vol.voxels[i] = std::bit_cast<double>(bits);
        break;
    }
  }
  return vol;
}

}  // namespace

Volume parse_mhd(const std::string& header, std::span<const std::uint8_t> raw) {
  return decode_payload(parse_mhd_header(header), raw);
}

Volume read_mhd(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const MhdHeader h = parse_mhd_header(ss.str());
  if (h.data_file == "LOCAL") throw ParseError("MHD key ElementDataFile: LOCAL payloads are not supported");
  const fs::path raw_path = fs::path(path).parent_path() / h.data_file;
  const auto bytes = read_file_bytes(raw_path);
  return decode_payload(h, bytes);
}

void write_mhd(const std::string& path, const Volume& vol, ElementType type) {
  const fs::path header_path(path);
  fs::path raw_path = header_path;
  raw_path.replace_extension(".raw");
  {
    std::ofstream out(header_path);
    if (!out) throw ParseError("cannot open " + path + " for writing");
    out << "ObjectType = Image\n"
        << "NDims = 3\n"
        << "BinaryData = True\n"
        << "BinaryDataByteOrderMSB = False\n"
        << "CompressedData = False\n";
    out.precision(17);
    out << "Offset = " << vol.origin[0] << ' ' << vol.origin[1] << ' ' << vol.origin[2] << '\n'
        << "ElementSpacing = " << vol.spacing[0] << ' ' << vol.spacing[1] << ' ' << vol.spacing[2] << '\n'
        << "DimSize = " << vol.width << ' ' << vol.height << ' ' << vol.depth << '\n'
        << "ElementType = " << element_type_name(type) << '\n'
        << "ElementDataFile = " << raw_path.filename().string() << '\n';
  }
  std::vector<char> bytes;
  bytes.reserve(vol.voxels.size() * element_size(type));
  for (double v : vol.voxels) {
    switch (type) {
      case ElementType::kShort: {
        const double r = std::clamp(std::round(v), -32768.0, 32767.0);
        store_le(bytes, static_cast<std::uint16_t>(static_cast<std::int16_t>(r)), 2);
        break;
      }
      case ElementType::kUChar:
        store_le(bytes, static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)), 1);
        break;
      case ElementType::kFloat:
        store_le(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
        break;
      case ElementType::kDouble:
        store_le(bytes, std::bit_cast<std::uint64_t>(v), 8);
        break;
    }
  }
  std::ofstream out(raw_path, std::ios::binary);
  if (!out) throw ParseError("cannot open " + raw_path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void attach_mask(Volume& vol, const std::string& mask_path) {
  const Volume m = read_mhd(mask_path);
  if (m.depth != vol.depth || m.height != vol.height || m.width != vol.width) {
    throw DimensionError("mask extents do not match volume " + mask_path);
  }
  vol.mask.resize(m.voxels.size());
  for (std::size_t i = 0; i < m.voxels.size(); ++i) vol.mask[i] = m.voxels[i] != 0.0 ? 1 : 0;
}

double preprocess_hu(double hu) { return (std::clamp(hu, kHuMin, kHuMax) - kHuMin) / (kHuMax - kHuMin); }

double unpreprocess(double value) { return value * (kHuMax - kHuMin) + kHuMin; }

Volume preprocess(const Volume& vol) {
  Volume out = vol;
  for (std::size_t i = 0; i < out.voxels.size(); ++i) {
    out.voxels[i] = preprocess_hu(vol.voxels[i]);
    if (vol.has_mask() && vol.mask[i] == 0) out.voxels[i] = 0.0;
  }
  return out;
}

Vec3 world_to_voxel(const Vec3& world, const Volume& vol) {
  Vec3 v{};
  for (int i = 0; i < 3; ++i) {
    if (!(vol.spacing[i] > 0)) throw DomainError("voxel spacing must be positive");
    v[i] = (world[i] - vol.origin[i]) / vol.spacing[i];
  }
  return v;
}

Vec3 voxel_to_world(const Vec3& voxel, const Volume& vol) {
  Vec3 w{};
  for (int i = 0; i < 3; ++i) w[i] = voxel[i] * vol.spacing[i] + vol.origin[i];
  return w;
}

double sample_trilinear(const Volume& vol, double z, double y, double x, double fill) {
  const double fz = std::floor(z), fy = std::floor(y), fx = std::floor(x);
  const Index z0 = static_cast<Index>(fz), y0 = static_cast<Index>(fy), x0 = static_cast<Index>(fx);
  const double tz = z - fz, ty = y - fy, tx = x - fx;
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double wgt = (dz ? tz : 1 - tz) * (dy ? ty : 1 - ty) * (dx ? tx : 1 - tx);
        if (wgt == 0.0) continue;
        const Index zz = z0 + dz, yy = y0 + dy, xx = x0 + dx;
        acc += wgt * (vol.contains(zz, yy, xx) ? vol.at(zz, yy, xx) : fill);
      }
  return acc;
}

Volume resample_isotropic(const Volume& vol, double target_spacing) {
  if (!(target_spacing > 0)) throw DomainError("target spacing must be positive");
  const double sx = vol.spacing[0] / target_spacing, sy = vol.spacing[1] / target_spacing,
               sz = vol.spacing[2] / target_spacing;
  const Index nw = std::max<Index>(1, static_cast<Index>(std::lround(vol.width * sx)));
  const Index nh = std::max<Index>(1, static_cast<Index>(std::lround(vol.height * sy)));
  const Index nd = std::max<Index>(1, static_cast<Index>(std::lround(vol.depth * sz)));
  Volume out(nd, nh, nw);
  out.spacing = {target_spacing, target_spacing, target_spacing};
  out.origin = vol.origin;
  if (vol.has_mask()) out.mask.assign(static_cast<std::size_t>(out.size()), 0);
  for (Index z = 0; z < nd; ++z)
    for (Index y = 0; y < nh; ++y)
      for (Index x = 0; x < nw; ++x) {
        const double iz = z / sz, iy = y / sy, ix = x / sx;
        out.at(z, y, x) = sample_trilinear(vol, iz, iy, ix, 0.0);
        if (vol.has_mask()) {
          const Index nz = std::clamp<Index>(std::lround(iz), 0, vol.depth - 1);
          const Index ny = std::clamp<Index>(std::lround(iy), 0, vol.height - 1);
          const Index nx = std::clamp<Index>(std::lround(ix), 0, vol.width - 1);
          out.mask[static_cast<std::size_t>(out.index(z, y, x))] = vol.mask[static_cast<std::size_t>(vol.index(nz, ny, nx))];
        }
      }
  return out;
}

}  // namespace deeplung
