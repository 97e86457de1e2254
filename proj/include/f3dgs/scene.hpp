// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "f3dgs/error.hpp"

namespace f3dgs {

/// Number of higher-order SH coefficients per Gaussian at degree L,
/// across all three color channels.
inline int sh_rest_width(int sh_degree) {
    int per_channel = (sh_degree + 1) * (sh_degree + 1) - 1;
    return 3 * per_channel;
}

/// Unrecognized PLY property carried through parse/write untouched.
struct ExtraProperty {
    std::string name;
    std::string type;              // ply scalar type name, e.g. "float", "uchar"
    std::size_t value_size = 0;    // bytes per value
    std::vector<std::uint8_t> data; // count * value_size bytes, column layout
};

/// Stored-domain 3DGS scene: attributes exactly as laid out in the PLY file
/// (opacity as a logit, scales in log space, quaternions unnormalized, wxyz).
struct RawScene {
    std::int64_t count = 0;
    int sh_degree = 0;
    std::vector<float> position;      // [N,3]
    std::vector<float> normal;        // [N,3] carried, unused
    std::vector<float> f_dc;          // [N,3]
    std::vector<float> f_rest;        // [N, sh_rest_width(L)]
    std::vector<float> opacity_logit; // [N]
    std::vector<float> log_scale;     // [N,3]
    std::vector<float> quat;          // [N,4] w,x,y,z
    std::vector<ExtraProperty> extras;
};

/// Activated-domain scene: opacity in [0,1], positive scales, unit quaternions,
/// SH split into the view-independent term sh0 and the higher orders.
struct GaussianScene {
    std::int64_t count = 0;
    int sh_degree = 0;
    std::vector<double> position;  // [N,3]
    std::vector<double> opacity;   // [N]
    std::vector<double> scale;     // [N,3]
    std::vector<double> quat_unit; // [N,4] w,x,y,z, unit norm
    std::vector<double> sh0;       // [N,3]
    std::vector<double> sh_rest;   // [N, sh_rest_width(L)]
};

enum class FeatureGroup { position, opacity, scale, quaternion, sh0, sh_rest };

inline constexpr std::array<FeatureGroup, 6> kAllFeatureGroups = {
    FeatureGroup::position, FeatureGroup::opacity,  FeatureGroup::scale,
    FeatureGroup::quaternion, FeatureGroup::sh0,    FeatureGroup::sh_rest};

const char* feature_group_name(FeatureGroup g);

/// Which attribute groups enter the per-Gaussian feature row. Disabled groups
/// are dimension-dropped, never zero-filled.
struct FeatureGroupMask {
    bool include_position = true;
    bool include_opacity = true;
    bool include_scale = true;
    bool include_quaternion = true;
    bool include_sh0 = true;
    bool include_sh_rest = true;

    bool enabled(FeatureGroup g) const;
    FeatureGroupMask without(FeatureGroup g) const;
    bool any() const {
        return include_position || include_opacity || include_scale || include_quaternion ||
               include_sh0 || include_sh_rest;
    }
    bool operator==(const FeatureGroupMask&) const = default;
};

int group_width(FeatureGroup g, int sh_degree);
int feature_width(const FeatureGroupMask& mask, int sh_degree);

/// Training-set statistics consumed by feature assembly. Scales are
/// standardized in log domain; the other groups need no statistics.
struct NormalizationSpec {
    bool has_log_scale_stats = false;
    std::array<double, 3> log_scale_mean = {0.0, 0.0, 0.0};
    std::array<double, 3> log_scale_std = {1.0, 1.0, 1.0};
};

struct ChannelStats {
    std::string name;
    double mean = 0.0;
    double stddev = 0.0;
    double min = 0.0;
    double max = 0.0;
};

struct SceneStats {
    std::int64_t count = 0;
    std::array<double, 3> bbox_min = {0.0, 0.0, 0.0};
    std::array<double, 3> bbox_max = {0.0, 0.0, 0.0};
    std::vector<ChannelStats> channels; // position, opacity, scale, quat, sh0, sh_rest order
};

/// Row-major [rows, cols] matrix of doubles.
struct FeatureMatrix {
    std::int64_t rows = 0;
    int cols = 0;
    std::vector<double> data;

    double* row(std::int64_t r) { return data.data() + r * cols; }
    const double* row(std::int64_t r) const { return data.data() + r * cols; }
};

/// Throws NonFiniteInput / ShapeMismatch when the scene violates its invariants.
void validate_raw(const RawScene& raw);
void validate_scene(const GaussianScene& scene);

/// Stored -> activated domain: sigmoid opacity, exp scales, normalized
/// quaternions (zero-norm maps to identity), SH passthrough with s0 split out.
GaussianScene activate(const RawScene& raw);

/// Inverse of activate. Opacity must lie strictly inside (0,1); callers clamp
/// first when needed. Quaternions pass through as stored.
RawScene deactivate(const GaussianScene& scene);

/// Per-Gaussian feature rows: enabled groups concatenated in fixed order
/// (position, opacity, scale, quaternion, sh0, sh_rest). Positions are
/// centered on the scene bbox and divided by the max extent (degenerate
/// extent counts as 1); scales are standardized in log domain with training
/// statistics; the remaining groups pass through.
FeatureMatrix assemble_features(const GaussianScene& scene, const FeatureGroupMask& mask,
                                const NormalizationSpec& norm);

/// Stored-domain variant of assemble_features: opacity logits, log scales
/// (standardized with the same statistics) and raw quaternions.
FeatureMatrix assemble_features_raw(const RawScene& raw, const FeatureGroupMask& mask,
                                    const NormalizationSpec& norm);

/// Log-scale mean/std over the concatenated Gaussians of the given scenes.
NormalizationSpec compute_normalization(std::span<const GaussianScene* const> scenes);

SceneStats scene_stats(const GaussianScene& scene);

} // namespace f3dgs
