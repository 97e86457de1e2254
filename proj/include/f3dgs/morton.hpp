// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>

#include "f3dgs/error.hpp"

namespace f3dgs {

inline constexpr int kMaxMortonBits = 21;

namespace detail {

// Spreads the low 21 bits of v so bit i lands at position 3i.
inline std::uint64_t spread_bits3(std::uint64_t v) {
    v &= 0x1fffffULL;
    v = (v | (v << 32)) & 0x1f00000000ffffULL;
    v = (v | (v << 16)) & 0x1f0000ff0000ffULL;
    v = (v | (v << 8)) & 0x100f00f00f00f00fULL;
    v = (v | (v << 4)) & 0x10c30c30c30c30c3ULL;
    v = (v | (v << 2)) & 0x1249249249249249ULL;
    return v;
}

inline std::uint64_t compact_bits3(std::uint64_t v) {
    v &= 0x1249249249249249ULL;
    v = (v ^ (v >> 2)) & 0x10c30c30c30c30c3ULL;
    v = (v ^ (v >> 4)) & 0x100f00f00f00f00fULL;
    v = (v ^ (v >> 8)) & 0x1f0000ff0000ffULL;
    v = (v ^ (v >> 16)) & 0x1f00000000ffffULL;
    v = (v ^ (v >> 32)) & 0x1fffffULL;
    return v;
}

} // namespace detail

/// Z-order index of a 3D grid cell. Bit i of x/y/z lands at output position
/// 3i / 3i+1 / 3i+2, so the code is a bijection on [0,2^bits)^3.
inline std::uint64_t morton_code(const std::array<std::uint32_t, 3>& cell, int bits) {
    if (bits < 1 || bits > kMaxMortonBits)
        raise(ErrorKind::OutOfRange, "morton bits must be in [1,21], got " + std::to_string(bits));
    const std::uint32_t limit = 1u << bits;
    for (int k = 0; k < 3; ++k) {
        if (cell[static_cast<std::size_t>(k)] >= limit)
            raise(ErrorKind::OutOfRange,
                  "cell axis " + std::to_string(k) + " = " + std::to_string(cell[static_cast<std::size_t>(k)]) +
                      " exceeds 2^" + std::to_string(bits));
    }
    return detail::spread_bits3(cell[0]) | (detail::spread_bits3(cell[1]) << 1) |
           (detail::spread_bits3(cell[2]) << 2);
}

inline std::array<std::uint32_t, 3> morton_decode(std::uint64_t code) {
    return {static_cast<std::uint32_t>(detail::compact_bits3(code)),
            static_cast<std::uint32_t>(detail::compact_bits3(code >> 1)),
            static_cast<std::uint32_t>(detail::compact_bits3(code >> 2))};
}

} // namespace f3dgs
