// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "f3dgs/scene.hpp"

namespace f3dgs {

struct PlyProperty {
    std::string name;
    std::string type; // ply scalar type name as written in the header
};

struct PlyHeader {
    std::int64_t vertex_count = 0;
    int sh_degree = 0;           // inferred from the f_rest_* run
    std::size_t header_bytes = 0; // offset of the first body byte
    std::size_t vertex_stride = 0;
    std::vector<PlyProperty> properties;
};

/// Header-only parse: validates magic/format and the 3DGS property set
/// without touching the body.
PlyHeader sniff(std::span<const std::uint8_t> bytes);

/// Full parse of a binary-little-endian 3DGS PLY. Properties may appear in
/// any order; unknown properties are kept in RawScene::extras so a re-write
/// loses nothing. Missing normals default to zero.
RawScene parse_ply(std::span<const std::uint8_t> bytes);

/// Canonical writer: fixed property order x,y,z,nx,ny,nz,f_dc_0..2,
/// f_rest_0..K-1,opacity,scale_0..2,rot_0..3 (extras appended), 32-bit
/// little-endian floats, no padding.
std::vector<std::uint8_t> write_ply(const RawScene& raw);

RawScene load_ply_file(const std::string& path);
void save_ply_file(const RawScene& raw, const std::string& path);

} // namespace f3dgs
