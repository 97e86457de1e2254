// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "f3dgs/scene.hpp"

namespace f3dgs {

inline constexpr int kSogsVersion = 1;

struct QuantizedChannel {
    std::vector<std::uint16_t> codes;
    double vmin = 0.0;
    double vmax = 0.0;
};

/// Uniform scalar quantization: codes = round((v-vmin)/(vmax-vmin)*(2^bits-1)),
/// round half away from zero. A constant channel maps to all-zero codes.
QuantizedChannel quantize_channel(std::span<const float> values, int bits = 8);
QuantizedChannel quantize_channel(std::span<const double> values, int bits = 8);

/// Exact inverse grid: v = vmin + code*(vmax-vmin)/(2^bits-1), full precision.
std::vector<double> dequantize_channel(std::span<const std::uint16_t> codes, double vmin,
                                       double vmax, int bits = 8);

/// One scalar attribute laid out as an 8-bit W x H grid (row-major), padded
/// past N by replicating the last valid code.
struct ChannelGrid {
    std::string name;
    std::vector<std::uint8_t> codes; // grid_w * grid_h entries
    double vmin = 0.0;
    double vmax = 0.0;
};

struct SogsPackage {
    int version = kSogsVersion;
    std::int64_t count = 0;
    std::uint32_t grid_w = 0;
    std::uint32_t grid_h = 0;
    int sh_degree = 0;
    int bits = 8;
    std::vector<ChannelGrid> channels;          // fixed canonical order
    std::vector<std::uint32_t> permutation;     // empty unless stored; perm[slot] = original row
};

/// Canonical coded channel order: x,y,z, opacity, scale_0..2, rot_0..3,
/// f_dc_0..2, f_rest_0..K-1. Normals are not coded (identically zero in 3DGS
/// exports) and decode back as zero.
std::vector<std::string> package_channel_names(int sh_degree);

struct SortResult {
    std::vector<std::uint32_t> permutation; // permutation[slot] = original row index
    std::vector<double> pass_costs;         // grid edge cost after stage 1, then after each pass
};

/// Two-stage layout sort: rows ordered by the Z-order code of their first
/// three (normalized, 10-bit quantized) columns, then a fixed number of
/// deterministic raster-scan passes of greedy right/down neighbor swaps that
/// strictly lower the grid edge cost. Ties keep the current layout.
SortResult sort_for_coherence(const FeatureMatrix& attributes, int refine_passes);

struct EncodeOptions {
    int bits = 8;
    int refine_passes = 2;
    bool store_permutation = false;
};

SogsPackage encode_scene(const RawScene& raw, const EncodeOptions& opts = {});

/// Exact recovery of the quantized values; original row order restored when
/// the permutation was stored, otherwise the sorted order is returned.
RawScene decode_scene(const SogsPackage& pkg);

struct CompressionReport {
    std::uint64_t raw_bytes = 0;
    std::uint64_t packed_bytes = 0;
    double ratio = 0.0;
    std::vector<std::pair<std::string, std::uint64_t>> per_channel_bytes;
};

CompressionReport compression_report(const RawScene& raw, std::uint64_t pkg_bytes);

/// PNG-encoded size per channel grid, without touching the filesystem.
std::vector<std::pair<std::string, std::uint64_t>> package_png_sizes(const SogsPackage& pkg,
                                                                     int threads = 1);

/// On-disk layout: meta.json + one <channel>.png per channel + optional
/// perm.bin of little-endian u32 indices.
void save_package(const SogsPackage& pkg, const std::string& dir, int threads = 1);
SogsPackage load_package(const std::string& dir);

/// Grid geometry used throughout: W = ceil(sqrt(N)), H = ceil(N/W).
std::pair<std::uint32_t, std::uint32_t> grid_dims(std::int64_t count);

} // namespace f3dgs
