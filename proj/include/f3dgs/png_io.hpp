// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace f3dgs {

struct GrayImage {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> pixels; // row-major, width*height bytes
};

/// Encodes an 8-bit grayscale PNG with fixed settings (per-row minimum-sum
/// filter heuristic, zlib level 9), so identical pixels always produce
/// identical bytes.
std::vector<std::uint8_t> encode_png_gray8(const GrayImage& image);

/// Decodes PNGs produced by encode_png_gray8 (8-bit grayscale,
/// non-interlaced). Throws CorruptPng on anything else or on damaged data.
GrayImage decode_png_gray8(std::span<const std::uint8_t> bytes);

} // namespace f3dgs
