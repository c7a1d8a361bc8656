#pragma once

#include <cstdint>
#include <random>

namespace prefhedge {

/// Engine for one block of paths, keyed by (seed, stream, block).
///
/// Blocks never share state, so a run is reproducible for any thread count
/// and any block can be regenerated on its own. Two simulations with equal
/// keys consume identical normals (common random numbers).
inline std::mt19937_64 block_engine(std::uint64_t seed, std::uint64_t stream, std::uint64_t block) {
    auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffULL); };
    auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
    std::seed_seq seq{lo(seed), hi(seed), lo(stream), hi(stream), lo(block), hi(block), 0x9e3779b9U};
    return std::mt19937_64(seq);
}

}  // namespace prefhedge
