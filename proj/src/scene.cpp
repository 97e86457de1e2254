// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#include "f3dgs/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace f3dgs {

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::RangeError: return "RangeError";
    case ErrorKind::EmptyMask: return "EmptyMask";
    case ErrorKind::MissingNormStats: return "MissingNormStats";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorKind::MissingProperty: return "MissingProperty";
    case ErrorKind::TruncatedBody: return "TruncatedBody";
    case ErrorKind::NonFiniteChannel: return "NonFiniteChannel";
    case ErrorKind::CodeOutOfRange: return "CodeOutOfRange";
    case ErrorKind::CorruptPng: return "CorruptPng";
    case ErrorKind::ChannelCountMismatch: return "ChannelCountMismatch";
    case ErrorKind::VersionUnsupported: return "VersionUnsupported";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::EmptyCaption: return "EmptyCaption";
    case ErrorKind::BadMagnitude: return "BadMagnitude";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorKind::SingleClassTrainingSet: return "SingleClassTrainingSet";
    case ErrorKind::MaskMismatch: return "MaskMismatch";
    case ErrorKind::EmptyScene: return "EmptyScene";
    case ErrorKind::GroupMapMismatch: return "GroupMapMismatch";
    case ErrorKind::EmptyManifest: return "EmptyManifest";
    case ErrorKind::NoFakesForEditor: return "NoFakesForEditor";
    case ErrorKind::MissingPrediction: return "MissingPrediction";
    case ErrorKind::IoError: return "IoError";
    }
    return "UnknownError";
}

const char* feature_group_name(FeatureGroup g) {
    switch (g) {
    case FeatureGroup::position: return "position";
    case FeatureGroup::opacity: return "opacity";
    case FeatureGroup::scale: return "scale";
    case FeatureGroup::quaternion: return "quaternion";
    case FeatureGroup::sh0: return "sh0";
    case FeatureGroup::sh_rest: return "sh_rest";
    }
    return "?";
}

bool FeatureGroupMask::enabled(FeatureGroup g) const {
    switch (g) {
    case FeatureGroup::position: return include_position;
    case FeatureGroup::opacity: return include_opacity;
    case FeatureGroup::scale: return include_scale;
    case FeatureGroup::quaternion: return include_quaternion;
    case FeatureGroup::sh0: return include_sh0;
    case FeatureGroup::sh_rest: return include_sh_rest;
    }
    return false;
}

FeatureGroupMask FeatureGroupMask::without(FeatureGroup g) const {
    FeatureGroupMask m = *this;
    switch (g) {
    case FeatureGroup::position: m.include_position = false; break;
    case FeatureGroup::opacity: m.include_opacity = false; break;
    case FeatureGroup::scale: m.include_scale = false; break;
    case FeatureGroup::quaternion: m.include_quaternion = false; break;
    case FeatureGroup::sh0: m.include_sh0 = false; break;
    case FeatureGroup::sh_rest: m.include_sh_rest = false; break;
    }
    return m;
}

int group_width(FeatureGroup g, int sh_degree) {
    switch (g) {
    case FeatureGroup::position: return 3;
    case FeatureGroup::opacity: return 1;
    case FeatureGroup::scale: return 3;
    case FeatureGroup::quaternion: return 4;
    case FeatureGroup::sh0: return 3;
    case FeatureGroup::sh_rest: return sh_rest_width(sh_degree);
    }
    return 0;
}

int feature_width(const FeatureGroupMask& mask, int sh_degree) {
    int w = 0;
    for (FeatureGroup g : kAllFeatureGroups)
        if (mask.enabled(g)) w += group_width(g, sh_degree);
    return w;
}

namespace {

template <typename T>
void check_finite(const std::vector<T>& values, std::int64_t count, int width, const char* field) {
    if (values.size() != static_cast<std::size_t>(count) * static_cast<std::size_t>(width))
        raise(ErrorKind::ShapeMismatch,
              std::string(field) + " has " + std::to_string(values.size()) + " values, expected " +
                  std::to_string(count * width));
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(static_cast<double>(values[i])))
            raise(ErrorKind::NonFiniteInput,
                  std::string(field) + " is not finite at gaussian " + std::to_string(i / static_cast<std::size_t>(width)));
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

void validate_raw(const RawScene& raw) {
    if (raw.count < 1) raise(ErrorKind::EmptyInput, "scene must contain at least one gaussian");
    if (raw.sh_degree < 0)
        raise(ErrorKind::RangeError, "sh_degree must be >= 0, got " + std::to_string(raw.sh_degree));
    check_finite(raw.position, raw.count, 3, "position");
    check_finite(raw.normal, raw.count, 3, "normal");
    check_finite(raw.f_dc, raw.count, 3, "f_dc");
    check_finite(raw.f_rest, raw.count, sh_rest_width(raw.sh_degree), "f_rest");
    check_finite(raw.opacity_logit, raw.count, 1, "opacity_logit");
    check_finite(raw.log_scale, raw.count, 3, "log_scale");
    check_finite(raw.quat, raw.count, 4, "quat");
}

void validate_scene(const GaussianScene& scene) {
    if (scene.count < 1) raise(ErrorKind::EmptyInput, "scene must contain at least one gaussian");
    check_finite(scene.position, scene.count, 3, "position");
    check_finite(scene.opacity, scene.count, 1, "opacity");
    check_finite(scene.scale, scene.count, 3, "scale");
    check_finite(scene.quat_unit, scene.count, 4, "quat_unit");
    check_finite(scene.sh0, scene.count, 3, "sh0");
    check_finite(scene.sh_rest, scene.count, sh_rest_width(scene.sh_degree), "sh_rest");
    for (std::int64_t i = 0; i < scene.count; ++i) {
        if (scene.opacity[i] < 0.0 || scene.opacity[i] > 1.0)
            raise(ErrorKind::RangeError, "opacity outside [0,1] at gaussian " + std::to_string(i));
        for (int k = 0; k < 3; ++k)
            if (scene.scale[i * 3 + k] <= 0.0)
                raise(ErrorKind::RangeError, "scale not positive at gaussian " + std::to_string(i));
        double n2 = 0.0;
        for (int k = 0; k < 4; ++k) {
            double q = scene.quat_unit[i * 4 + k];
            n2 += q * q;
        }
        if (std::abs(std::sqrt(n2) - 1.0) > 1e-6)
            raise(ErrorKind::RangeError, "quaternion not unit norm at gaussian " + std::to_string(i));
    }
}

GaussianScene activate(const RawScene& raw) {
    validate_raw(raw);
    const std::int64_t n = raw.count;
    const int rest = sh_rest_width(raw.sh_degree);

    GaussianScene s;
    s.count = n;
    s.sh_degree = raw.sh_degree;
    s.position.resize(static_cast<std::size_t>(n) * 3);
    s.opacity.resize(static_cast<std::size_t>(n));
    s.scale.resize(static_cast<std::size_t>(n) * 3);
    s.quat_unit.resize(static_cast<std::size_t>(n) * 4);
    s.sh0.resize(static_cast<std::size_t>(n) * 3);
    s.sh_rest.resize(static_cast<std::size_t>(n) * rest);

    for (std::int64_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) {
            s.position[i * 3 + k] = raw.position[i * 3 + k];
            s.scale[i * 3 + k] = std::exp(static_cast<double>(raw.log_scale[i * 3 + k]));
            s.sh0[i * 3 + k] = raw.f_dc[i * 3 + k];
        }
        s.opacity[i] = sigmoid(raw.opacity_logit[i]);
        double n2 = 0.0;
        for (int k = 0; k < 4; ++k) {
            double q = raw.quat[i * 4 + k];
            n2 += q * q;
        }
        if (n2 == 0.0) {
            s.quat_unit[i * 4 + 0] = 1.0;
            s.quat_unit[i * 4 + 1] = 0.0;
            s.quat_unit[i * 4 + 2] = 0.0;
            s.quat_unit[i * 4 + 3] = 0.0;
        } else {
            double inv = 1.0 / std::sqrt(n2);
            for (int k = 0; k < 4; ++k) s.quat_unit[i * 4 + k] = raw.quat[i * 4 + k] * inv;
        }
        for (int k = 0; k < rest; ++k) s.sh_rest[i * rest + k] = raw.f_rest[i * rest + k];
    }
    return s;
}

RawScene deactivate(const GaussianScene& scene) {
    validate_scene(scene);
    const std::int64_t n = scene.count;
    const int rest = sh_rest_width(scene.sh_degree);

    RawScene raw;
    raw.count = n;
    raw.sh_degree = scene.sh_degree;
    raw.position.resize(static_cast<std::size_t>(n) * 3);
    raw.normal.assign(static_cast<std::size_t>(n) * 3, 0.0f);
    raw.f_dc.resize(static_cast<std::size_t>(n) * 3);
    raw.f_rest.resize(static_cast<std::size_t>(n) * rest);
    raw.opacity_logit.resize(static_cast<std::size_t>(n));
    raw.log_scale.resize(static_cast<std::size_t>(n) * 3);
    raw.quat.resize(static_cast<std::size_t>(n) * 4);

    for (std::int64_t i = 0; i < n; ++i) {
        double o = scene.opacity[i];
        if (o <= 0.0 || o >= 1.0)
            raise(ErrorKind::RangeError,
                  "opacity " + std::to_string(o) + " at gaussian " + std::to_string(i) +
                      " has no finite logit; clamp before deactivating");
        raw.opacity_logit[i] = static_cast<float>(std::log(o / (1.0 - o)));
        for (int k = 0; k < 3; ++k) {
            raw.position[i * 3 + k] = static_cast<float>(scene.position[i * 3 + k]);
            raw.log_scale[i * 3 + k] = static_cast<float>(std::log(scene.scale[i * 3 + k]));
            raw.f_dc[i * 3 + k] = static_cast<float>(scene.sh0[i * 3 + k]);
        }
        for (int k = 0; k < 4; ++k)
            raw.quat[i * 4 + k] = static_cast<float>(scene.quat_unit[i * 4 + k]);
        for (int k = 0; k < rest; ++k)
            raw.f_rest[i * rest + k] = static_cast<float>(scene.sh_rest[i * rest + k]);
    }
    return raw;
}

namespace {

struct Bbox {
    std::array<double, 3> lo = {0, 0, 0};
    std::array<double, 3> hi = {0, 0, 0};
    std::array<double, 3> center = {0, 0, 0};
    double extent = 1.0;
};

template <typename T>
Bbox position_bbox(const std::vector<T>& position, std::int64_t count) {
    Bbox b;
    for (int k = 0; k < 3; ++k) {
        b.lo[k] = std::numeric_limits<double>::infinity();
        b.hi[k] = -std::numeric_limits<double>::infinity();
    }
    for (std::int64_t i = 0; i < count; ++i) {
        for (int k = 0; k < 3; ++k) {
            double v = position[i * 3 + k];
            b.lo[k] = std::min(b.lo[k], v);
            b.hi[k] = std::max(b.hi[k], v);
        }
    }
    double extent = 0.0;
    for (int k = 0; k < 3; ++k) {
        b.center[k] = 0.5 * (b.lo[k] + b.hi[k]);
        extent = std::max(extent, b.hi[k] - b.lo[k]);
    }
    b.extent = extent > 0.0 ? extent : 1.0; // degenerate bbox divides by 1
    return b;
}

struct GroupSource {
    const double* data = nullptr;
    const float* fdata = nullptr;
    int width = 0;

    double at(std::int64_t i, int k) const {
        return data ? data[i * width + k] : static_cast<double>(fdata[i * width + k]);
    }
};

template <typename PosVec, typename ScaleIsLogTag>
FeatureMatrix assemble_impl(std::int64_t count, int sh_degree, const FeatureGroupMask& mask,
                            const NormalizationSpec& norm, const PosVec& position,
                            const GroupSource& opacity_src, const GroupSource& scale_src,
                            ScaleIsLogTag scale_is_log, const GroupSource& quat_src,
                            const GroupSource& sh0_src, const GroupSource& rest_src) {
    if (!mask.any()) raise(ErrorKind::EmptyMask, "at least one feature group must be enabled");
    if (mask.include_scale && !norm.has_log_scale_stats)
        raise(ErrorKind::MissingNormStats, "scale group enabled but log-scale statistics missing");

    const int width = feature_width(mask, sh_degree);
    FeatureMatrix out;
    out.rows = count;
    out.cols = width;
    out.data.resize(static_cast<std::size_t>(count) * static_cast<std::size_t>(width));

    Bbox bbox = position_bbox(position, count);
    std::array<double, 3> sstd{};
    for (int k = 0; k < 3; ++k)
        sstd[k] = norm.log_scale_std[k] > 0.0 ? norm.log_scale_std[k] : 1.0;

    for (std::int64_t i = 0; i < count; ++i) {
        double* row = out.row(i);
        int c = 0;
        if (mask.include_position) {
            for (int k = 0; k < 3; ++k)
                row[c++] = (static_cast<double>(position[i * 3 + k]) - bbox.center[k]) / bbox.extent;
        }
        if (mask.include_opacity) row[c++] = opacity_src.at(i, 0);
        if (mask.include_scale) {
            for (int k = 0; k < 3; ++k) {
                double v = scale_src.at(i, k);
                double log_v = scale_is_log ? v : std::log(v);
                row[c++] = (log_v - norm.log_scale_mean[k]) / sstd[k];
            }
        }
        if (mask.include_quaternion)
            for (int k = 0; k < 4; ++k) row[c++] = quat_src.at(i, k);
        if (mask.include_sh0)
            for (int k = 0; k < 3; ++k) row[c++] = sh0_src.at(i, k);
        if (mask.include_sh_rest) {
            const int rest = sh_rest_width(sh_degree);
            for (int k = 0; k < rest; ++k) row[c++] = rest_src.at(i, k);
        }
    }
    return out;
}

} // namespace

FeatureMatrix assemble_features(const GaussianScene& scene, const FeatureGroupMask& mask,
                                const NormalizationSpec& norm) {
    validate_scene(scene);
    GroupSource op{scene.opacity.data(), nullptr, 1};
    GroupSource sc{scene.scale.data(), nullptr, 3};
    GroupSource qu{scene.quat_unit.data(), nullptr, 4};
    GroupSource s0{scene.sh0.data(), nullptr, 3};
    GroupSource sr{scene.sh_rest.data(), nullptr, sh_rest_width(scene.sh_degree)};
    return assemble_impl(scene.count, scene.sh_degree, mask, norm, scene.position, op, sc,
                         /*scale_is_log=*/false, qu, s0, sr);
}

FeatureMatrix assemble_features_raw(const RawScene& raw, const FeatureGroupMask& mask,
                                    const NormalizationSpec& norm) {
    validate_raw(raw);
    GroupSource op{nullptr, raw.opacity_logit.data(), 1};
    GroupSource sc{nullptr, raw.log_scale.data(), 3};
    GroupSource qu{nullptr, raw.quat.data(), 4};
    GroupSource s0{nullptr, raw.f_dc.data(), 3};
    GroupSource sr{nullptr, raw.f_rest.data(), sh_rest_width(raw.sh_degree)};
    return assemble_impl(raw.count, raw.sh_degree, mask, norm, raw.position, op, sc,
                         /*scale_is_log=*/true, qu, s0, sr);
}

NormalizationSpec compute_normalization(std::span<const GaussianScene* const> scenes) {
    NormalizationSpec norm;
    std::int64_t total = 0;
    std::array<double, 3> sum{};
    for (const GaussianScene* s : scenes) {
        for (std::int64_t i = 0; i < s->count; ++i)
            for (int k = 0; k < 3; ++k) sum[k] += std::log(s->scale[i * 3 + k]);
        total += s->count;
    }
    if (total == 0) return norm;
    for (int k = 0; k < 3; ++k) norm.log_scale_mean[k] = sum[k] / static_cast<double>(total);
    std::array<double, 3> sq{};
    for (const GaussianScene* s : scenes)
        for (std::int64_t i = 0; i < s->count; ++i)
            for (int k = 0; k < 3; ++k) {
                double d = std::log(s->scale[i * 3 + k]) - norm.log_scale_mean[k];
                sq[k] += d * d;
            }
    for (int k = 0; k < 3; ++k) {
        double var = sq[k] / static_cast<double>(total);
        norm.log_scale_std[k] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    norm.has_log_scale_stats = true;
    return norm;
}

namespace {

ChannelStats channel_stats(const std::string& name, const std::vector<double>& values,
                           std::int64_t count, int width, int channel) {
    ChannelStats st;
    st.name = name;
    st.min = std::numeric_limits<double>::infinity();
    st.max = -std::numeric_limits<double>::infinity();
    // Welford accumulation; the tests check it against a plain two-pass reference.
    double mean = 0.0, m2 = 0.0;
    for (std::int64_t i = 0; i < count; ++i) {
        double v = values[i * width + channel];
        st.min = std::min(st.min, v);
        st.max = std::max(st.max, v);
        double delta = v - mean;
        mean += delta / static_cast<double>(i + 1);
        m2 += delta * (v - mean);
    }
    st.mean = mean;
    st.stddev = count > 0 ? std::sqrt(m2 / static_cast<double>(count)) : 0.0;
    return st;
}

} // namespace

SceneStats scene_stats(const GaussianScene& scene) {
    validate_scene(scene);
    SceneStats stats;
    stats.count = scene.count;
    Bbox b = position_bbox(scene.position, scene.count);
    stats.bbox_min = b.lo;
    stats.bbox_max = b.hi;

    const char* pos_names[3] = {"x", "y", "z"};
    for (int k = 0; k < 3; ++k)
        stats.channels.push_back(channel_stats(pos_names[k], scene.position, scene.count, 3, k));
    stats.channels.push_back(channel_stats("opacity", scene.opacity, scene.count, 1, 0));
    for (int k = 0; k < 3; ++k)
        stats.channels.push_back(
            channel_stats("scale_" + std::to_string(k), scene.scale, scene.count, 3, k));
    for (int k = 0; k < 4; ++k)
        stats.channels.push_back(
            channel_stats("rot_" + std::to_string(k), scene.quat_unit, scene.count, 4, k));
    for (int k = 0; k < 3; ++k)
        stats.channels.push_back(
            channel_stats("f_dc_" + std::to_string(k), scene.sh0, scene.count, 3, k));
    const int rest = sh_rest_width(scene.sh_degree);
    for (int k = 0; k < rest; ++k)
        stats.channels.push_back(
            channel_stats("f_rest_" + std::to_string(k), scene.sh_rest, scene.count, rest, k));
    return stats;
}

} // namespace f3dgs
