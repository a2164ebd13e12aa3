#pragma once

#include <cstdint>
#include <random>

namespace steadyop {

/// Independent generator for sub-stream `stream` of a seed (sample index,
/// parameter slot, ...). Results do not depend on which thread draws them.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x5eedu};
  return std::mt19937_64(seq);
}

}  // namespace steadyop
