#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "deeplung/layers.hpp"

namespace deeplung {

// Binary tensor checkpoint ("DLT1"):
//   magic "DLT1"
//   repeated until EOF:
//     u64 name length, name bytes, u64 rank, rank x u64 extents, numel x f64
// All integers and floats little-endian.

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const TensorRegistry& registry);
/// Copies stored values into the registry's tensors. Every registry entry must
/// be present with a matching shape; extra records in the file are an error.
void load_checkpoint(const std::string& path, const TensorRegistry& registry);

namespace binio {
void put_u64(std::ostream& out, std::uint64_t v);
void put_u32(std::ostream& out, std::uint32_t v);
void put_f64(std::ostream& out, double v);
void put_u8(std::ostream& out, std::uint8_t v);
std::uint64_t get_u64(std::istream& in);
std::uint32_t get_u32(std::istream& in);
double get_f64(std::istream& in);
std::uint8_t get_u8(std::istream& in);
}  // namespace binio

}  // namespace deeplung
