#include "steadyop/fnt.hpp"

#include "steadyop/errors.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace steadyop {
namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  std::array<char, sizeof(T)> bytes{};
  if (!in.read(bytes.data(), sizeof(T))) throw FormatError("unexpected end of stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

constexpr std::array<char, 4> kMagic{'F', 'N', 'O', 'T'};

}  // namespace

void write_fnt(std::ostream& out, const Tensor& t) {
  if (t.rank() > 255) throw DimensionError("FNT supports at most 255 dimensions");
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint16_t>(out, kFntVersion);
  put_le<std::uint8_t>(out, kFntDtypeF64);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (Index d : t.shape()) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  } else {
    for (Index i = 0; i < t.size(); ++i) put_le<double>(out, t[i]);
  }
  if (!out) throw FormatError("FNT write failed");
}

Tensor read_fnt(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError("bad FNT magic");
  if (get_le<std::uint16_t>(in) != kFntVersion) throw FormatError("unsupported FNT version");
  if (get_le<std::uint8_t>(in) != kFntDtypeF64) throw FormatError("unsupported FNT dtype");
  const auto ndim = get_le<std::uint8_t>(in);
  Shape shape(ndim);
  for (auto& d : shape) {
    const auto v = get_le<std::uint64_t>(in);
    if (v > (std::uint64_t{1} << 40)) throw FormatError("FNT dimension too large");
    d = static_cast<Index>(v);
  }
  Tensor t(shape);
  if constexpr (std::endian::native == std::endian::little) {
    const auto bytes = static_cast<std::streamsize>(t.size() * sizeof(double));
    if (!in.read(reinterpret_cast<char*>(t.data()), bytes)) throw FormatError("truncated FNT payload");
  } else {
    for (Index i = 0; i < t.size(); ++i) t[i] = get_le<double>(in);
  }
  return t;
}

void save_fnt(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_fnt(out, t);
}

Tensor load_fnt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_fnt(in);
}

void write_fnc(std::ostream& out, const NamedTensors& entries) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    if (name.size() > 0xFFFF) throw FormatError("FNC entry name too long");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_fnt(out, tensor);
  }
}

NamedTensors read_fnc(std::istream& in) {
  NamedTensors entries;
  const auto count = get_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint16_t>(in);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("truncated FNC entry name");
    if (!entries.emplace(name, read_fnt(in)).second) throw FormatError("duplicate FNC entry " + name);
  }
  return entries;
}

void save_fnc(const std::filesystem::path& path, const NamedTensors& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_fnc(out, entries);
}

NamedTensors load_fnc(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_fnc(in);
}

}  // namespace steadyop
