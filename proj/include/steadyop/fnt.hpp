#pragma once

// Binary tensor and checkpoint formats.
//
// FNT:  "FNOT" | u16 version (=1) | u8 dtype (1 = f64) | u8 ndim |
//       ndim x u64 dims | row-major payload. All integers and floats
//       little-endian.
// FNC:  u32 entry count | per entry: u16 name length, UTF-8 name, FNT blob.

#include "steadyop/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

namespace steadyop {

inline constexpr std::uint16_t kFntVersion = 1;
inline constexpr std::uint8_t kFntDtypeF64 = 1;

/// Ordered name -> tensor map. std::map gives the deterministic order
/// that checkpoints are written in.
using NamedTensors = std::map<std::string, Tensor>;

void write_fnt(std::ostream& out, const Tensor& t);
Tensor read_fnt(std::istream& in);

void save_fnt(const std::filesystem::path& path, const Tensor& t);
Tensor load_fnt(const std::filesystem::path& path);

void write_fnc(std::ostream& out, const NamedTensors& entries);
NamedTensors read_fnc(std::istream& in);

void save_fnc(const std::filesystem::path& path, const NamedTensors& entries);
NamedTensors load_fnc(const std::filesystem::path& path);

}  // namespace steadyop
