#include "deeplung/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "deeplung/errors.hpp"

namespace deeplung {

namespace binio {

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 8);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 4);
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 8)) throw ParseError("unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return v;
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw ParseError("unexpected end of file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[i]} << (8 * i);
  return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

std::uint8_t get_u8(std::istream& in) {
  const int c = in.get();
  if (c == std::char_traits<char>::eof()) throw ParseError("unexpected end of file");
  return static_cast<std::uint8_t>(c);
}

}  // namespace binio

namespace {
constexpr char kMagic[4] = {'D', 'L', 'T', '1'};
constexpr std::uint64_t kMaxNameLength = 1 << 16;
constexpr std::uint64_t kMaxRank = 16;
}  // namespace

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  out.write(kMagic, 4);
  for (const auto& [name, t] : tensors) {
    binio::put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    binio::put_u64(out, t.shape().size());
    for (Index e : t.shape()) binio::put_u64(out, static_cast<std::uint64_t>(e));
    for (double v : t.data()) binio::put_f64(out, v);
  }
}

std::vector<NamedTensor> read_checkpoint(std::istream& in) {
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("checkpoint: bad magic, expected DLT1");
  }
  std::vector<NamedTensor> out;
  while (in.peek() != std::char_traits<char>::eof()) {
    const std::uint64_t len = binio::get_u64(in);
    if (len > kMaxNameLength) throw ParseError("checkpoint: implausible name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(len))) {
      throw ParseError("checkpoint: truncated tensor name");
    }
    const std::uint64_t rank = binio::get_u64(in);
    if (rank > kMaxRank) throw ParseError("checkpoint: implausible rank for " + name);
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(binio::get_u64(in)));
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    for (double& v : data) v = binio::get_f64(in);
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

void save_checkpoint(const std::string& path, const TensorRegistry& registry) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open " + path + " for writing");
  write_checkpoint(out, registry.items());
  if (!out) throw ParseError("write failed for " + path);
}

void load_checkpoint(const std::string& path, const TensorRegistry& registry) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path);
  const auto stored = read_checkpoint(in);
  if (stored.size() != registry.items().size()) {
    throw ParseError("checkpoint " + path + " holds " + std::to_string(stored.size()) +
                     " tensors, network expects " + std::to_string(registry.items().size()));
  }
  for (const auto& [name, t] : stored) {
    const Tensor* target = registry.find(name);
    if (target == nullptr) throw ParseError("checkpoint tensor " + name + " not in network");
    if (target->shape() != t.shape()) {
      throw ParseError("checkpoint tensor " + name + " has shape " + shape_str(t.shape()) +
                       ", network expects " + shape_str(target->shape()));
    }
    Tensor dst = *target;
    std::copy(t.data().begin(), t.data().end(), dst.data().begin());
  }
}

}  // namespace deeplung
