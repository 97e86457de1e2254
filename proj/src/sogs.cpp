// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#include "f3dgs/sogs.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "f3dgs/morton.hpp"
#include "f3dgs/png_io.hpp"

namespace f3dgs {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace

std::pair<std::uint32_t, std::uint32_t> grid_dims(std::int64_t count) {
    auto w = static_cast<std::uint32_t>(std::ceil(std::sqrt(static_cast<double>(count))));
    if (w == 0) w = 1;
    auto h = static_cast<std::uint32_t>((count + w - 1) / w);
    if (h == 0) h = 1;
    return {w, h};
}

namespace {

template <typename T>
QuantizedChannel quantize_impl(std::span<const T> values, int bits) {
    if (bits < 1 || bits > 16)
        raise(ErrorKind::OutOfRange, "quantization bits must be in [1,16], got " + std::to_string(bits));
    QuantizedChannel q;
    q.codes.resize(values.size());
    if (values.empty()) return q;

    T vmin = values[0], vmax = values[0];
    for (T v : values) {
        if (!std::isfinite(static_cast<double>(v)))
            raise(ErrorKind::NonFiniteChannel, "channel contains a non-finite value");
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
    }
    q.vmin = vmin;
    q.vmax = vmax;
    if (q.vmin == q.vmax) return q; // degenerate range: all codes zero

    const double levels = static_cast<double>((1u << bits) - 1);
    const double inv_range = 1.0 / (q.vmax - q.vmin);
    for (std::size_t i = 0; i < values.size(); ++i) {
        double t = (static_cast<double>(values[i]) - q.vmin) * inv_range * levels;
        long code = std::lround(t); // round half away from zero; t >= 0 here
        code = std::clamp(code, 0L, static_cast<long>(levels));
        q.codes[i] = static_cast<std::uint16_t>(code);
    }
    return q;
}

} // namespace

QuantizedChannel quantize_channel(std::span<const float> values, int bits) {
    return quantize_impl(values, bits);
}

QuantizedChannel quantize_channel(std::span<const double> values, int bits) {
    return quantize_impl(values, bits);
}

std::vector<double> dequantize_channel(std::span<const std::uint16_t> codes, double vmin,
                                       double vmax, int bits) {
    if (bits < 1 || bits > 16)
        raise(ErrorKind::OutOfRange, "quantization bits must be in [1,16], got " + std::to_string(bits));
    const std::uint32_t limit = 1u << bits;
    std::vector<double> out(codes.size());
    const double step = vmax > vmin ? (vmax - vmin) / static_cast<double>(limit - 1) : 0.0;
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (codes[i] >= limit)
            raise(ErrorKind::CodeOutOfRange,
                  "code " + std::to_string(codes[i]) + " exceeds " + std::to_string(bits) + " bits");
        out[i] = vmin + static_cast<double>(codes[i]) * step;
    }
    return out;
}

namespace {

// per-column [0,1] normalization; constant columns collapse to 0
std::vector<double> normalize_columns(const FeatureMatrix& m) {
    std::vector<double> out(m.data.size());
    for (int c = 0; c < m.cols; ++c) {
        double lo = m.data[static_cast<std::size_t>(c)];
        double hi = lo;
        for (std::int64_t r = 0; r < m.rows; ++r) {
            double v = m.row(r)[c];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        double inv = hi > lo ? 1.0 / (hi - lo) : 0.0;
        for (std::int64_t r = 0; r < m.rows; ++r)
            out[static_cast<std::size_t>(r) * m.cols + c] = (m.row(r)[c] - lo) * inv;
    }
    return out;
}

struct GridLayout {
    std::uint32_t w = 0, h = 0;
    std::int64_t occupied = 0; // slots < occupied hold rows
    const std::vector<double>* rows = nullptr;
    int cols = 0;
    std::vector<std::uint32_t>* slot_to_row = nullptr;

    double dist(std::int64_t slot_a, std::int64_t slot_b) const {
        const double* a = rows->data() + static_cast<std::size_t>((*slot_to_row)[static_cast<std::size_t>(slot_a)]) * cols;
        const double* b = rows->data() + static_cast<std::size_t>((*slot_to_row)[static_cast<std::size_t>(slot_b)]) * cols;
        double s = 0.0;
        for (int c = 0; c < cols; ++c) {
            double d = a[c] - b[c];
            s += d * d;
        }
        return std::sqrt(s);
    }

    // occupied neighbors of a slot in the 4-neighborhood
    template <typename Fn>
    void for_neighbors(std::int64_t slot, Fn&& fn) const {
        std::int64_t r = slot / w, c = slot % w;
        if (c > 0) fn(slot - 1);
        if (c + 1 < w && slot + 1 < occupied) fn(slot + 1);
        if (r > 0) fn(slot - w);
        if (r + 1 < h && slot + w < occupied) fn(slot + w);
    }

    double total_edge_cost() const {
        double total = 0.0;
        for (std::int64_t s = 0; s < occupied; ++s) {
            std::int64_t r = s / w, c = s % w;
            if (c + 1 < w && s + 1 < occupied) total += dist(s, s + 1);
            if (r + 1 < h && s + w < occupied) total += dist(s, s + w);
        }
        return total;
    }

    // edge cost touching slots a and b, with the shared edge counted once
    double local_cost(std::int64_t a, std::int64_t b) const {
        double cost = 0.0;
        for_neighbors(a, [&](std::int64_t nb) {
            if (nb != b) cost += dist(a, nb);
        });
        for_neighbors(b, [&](std::int64_t nb) {
            if (nb != a) cost += dist(b, nb);
        });
        std::int64_t ra = a / w, rb = b / w;
        bool adjacent = (a / w == b / w && std::llabs(a - b) == 1) || (a % w == b % w && std::llabs(ra - rb) == 1);
        if (adjacent) cost += dist(a, b);
        return cost;
    }
};

} // namespace

SortResult sort_for_coherence(const FeatureMatrix& attributes, int refine_passes) {
    const std::int64_t n = attributes.rows;
    if (n < 1) raise(ErrorKind::EmptyInput, "cannot sort an empty attribute matrix");
    if (refine_passes < 0) raise(ErrorKind::OutOfRange, "refine_passes must be >= 0");

    SortResult result;
    result.permutation.resize(static_cast<std::size_t>(n));
    std::iota(result.permutation.begin(), result.permutation.end(), 0u);
    if (n == 1) {
        result.pass_costs.assign(static_cast<std::size_t>(refine_passes) + 1, 0.0);
        return result;
    }

    std::vector<double> norm = normalize_columns(attributes);
    const int cols = attributes.cols;

    // stage 1: Z-order of the first three columns at 10-bit resolution
    constexpr int kKeyBits = 10;
    constexpr std::uint32_t kCells = (1u << kKeyBits) - 1;
    std::vector<std::uint64_t> keys(static_cast<std::size_t>(n));
    for (std::int64_t r = 0; r < n; ++r) {
        std::array<std::uint32_t, 3> cell = {0, 0, 0};
        for (int k = 0; k < std::min(3, cols); ++k) {
            double v = norm[static_cast<std::size_t>(r) * cols + k];
            cell[static_cast<std::size_t>(k)] =
                std::min(kCells, static_cast<std::uint32_t>(v * static_cast<double>(kCells + 1)));
        }
        keys[static_cast<std::size_t>(r)] = morton_code(cell, kKeyBits);
    }
    std::stable_sort(result.permutation.begin(), result.permutation.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return keys[a] < keys[b]; });

    // stage 2: greedy right/down neighbor swaps in raster order
    auto [w, h] = grid_dims(n);
    GridLayout grid{w, h, n, &norm, cols, &result.permutation};
    result.pass_costs.push_back(grid.total_edge_cost());

    for (int pass = 0; pass < refine_passes; ++pass) {
        for (std::int64_t s = 0; s < n; ++s) {
            for (std::int64_t cand : {s + 1, s + static_cast<std::int64_t>(w)}) {
                if (cand >= n) continue;
                if (cand == s + 1 && (s % w) + 1 >= w) continue; // row wrap
                double before = grid.local_cost(s, cand);
                std::swap(result.permutation[static_cast<std::size_t>(s)],
                          result.permutation[static_cast<std::size_t>(cand)]);
                double after = grid.local_cost(s, cand);
                if (!(before - after > 1e-12)) {
                    std::swap(result.permutation[static_cast<std::size_t>(s)],
                              result.permutation[static_cast<std::size_t>(cand)]);
                }
            }
        }
        result.pass_costs.push_back(grid.total_edge_cost());
    }
    return result;
}

std::vector<std::string> package_channel_names(int sh_degree) {
    std::vector<std::string> names = {"x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2",
                                      "rot_0", "rot_1", "rot_2", "rot_3",
                                      "f_dc_0", "f_dc_1", "f_dc_2"};
    for (int k = 0; k < sh_rest_width(sh_degree); ++k)
        names.push_back("f_rest_" + std::to_string(k));
    return names;
}

namespace {

// gathers one canonical channel of the raw scene into a dense float column
std::vector<float> gather_channel(const RawScene& raw, std::size_t channel_index) {
    const std::size_t n = static_cast<std::size_t>(raw.count);
    std::vector<float> out(n);
    const int rest = sh_rest_width(raw.sh_degree);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = channel_index;
        float v = 0.0f;
        if (c < 3) v = raw.position[i * 3 + c];
        else if (c == 3) v = raw.opacity_logit[i];
        else if (c < 7) v = raw.log_scale[i * 3 + (c - 4)];
        else if (c < 11) v = raw.quat[i * 4 + (c - 7)];
        else if (c < 14) v = raw.f_dc[i * 3 + (c - 11)];
        else v = raw.f_rest[i * static_cast<std::size_t>(rest) + (c - 14)];
        out[i] = v;
    }
    return out;
}

void scatter_channel(RawScene& raw, std::size_t channel_index, const std::vector<float>& values) {
    const std::size_t n = static_cast<std::size_t>(raw.count);
    const int rest = sh_rest_width(raw.sh_degree);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = channel_index;
        float v = values[i];
        if (c < 3) raw.position[i * 3 + c] = v;
        else if (c == 3) raw.opacity_logit[i] = v;
        else if (c < 7) raw.log_scale[i * 3 + (c - 4)] = v;
        else if (c < 11) raw.quat[i * 4 + (c - 7)] = v;
        else if (c < 14) raw.f_dc[i * 3 + (c - 11)] = v;
        else raw.f_rest[i * static_cast<std::size_t>(rest) + (c - 14)] = v;
    }
}

} // namespace

SogsPackage encode_scene(const RawScene& raw, const EncodeOptions& opts) {
    validate_raw(raw);
    if (opts.bits < 1 || opts.bits > 8)
        raise(ErrorKind::OutOfRange,
              "package bit depth must be in [1,8], got " + std::to_string(opts.bits));

    const std::int64_t n = raw.count;
    const std::vector<std::string> names = package_channel_names(raw.sh_degree);
    const std::size_t num_channels = names.size();

    // one matrix with every coded channel, in canonical order, for the sort
    FeatureMatrix matrix;
    matrix.rows = n;
    matrix.cols = static_cast<int>(num_channels);
    matrix.data.resize(static_cast<std::size_t>(n) * num_channels);
    std::vector<std::vector<float>> columns(num_channels);
    for (std::size_t c = 0; c < num_channels; ++c) {
        columns[c] = gather_channel(raw, c);
        for (std::int64_t r = 0; r < n; ++r)
            matrix.row(r)[c] = columns[c][static_cast<std::size_t>(r)];
    }

    SortResult sorted = sort_for_coherence(matrix, opts.refine_passes);

    auto [w, h] = grid_dims(n);
    SogsPackage pkg;
    pkg.count = n;
    pkg.grid_w = w;
    pkg.grid_h = h;
    pkg.sh_degree = raw.sh_degree;
    pkg.bits = opts.bits;
    pkg.channels.resize(num_channels);

    const std::size_t cells = static_cast<std::size_t>(w) * h;
    for (std::size_t c = 0; c < num_channels; ++c) {
        std::vector<float> permuted(static_cast<std::size_t>(n));
        for (std::int64_t slot = 0; slot < n; ++slot)
            permuted[static_cast<std::size_t>(slot)] =
                columns[c][sorted.permutation[static_cast<std::size_t>(slot)]];
        QuantizedChannel q = quantize_channel(permuted, opts.bits);

        ChannelGrid& grid = pkg.channels[c];
        grid.name = names[c];
        grid.vmin = q.vmin;
        grid.vmax = q.vmax;
        grid.codes.resize(cells);
        for (std::int64_t slot = 0; slot < n; ++slot)
            grid.codes[static_cast<std::size_t>(slot)] =
                static_cast<std::uint8_t>(q.codes[static_cast<std::size_t>(slot)]);
        // padding replicates the last valid code
        std::uint8_t pad = grid.codes[static_cast<std::size_t>(n - 1)];
        for (std::size_t slot = static_cast<std::size_t>(n); slot < cells; ++slot)
            grid.codes[slot] = pad;
    }

    if (opts.store_permutation) pkg.permutation = sorted.permutation;
    return pkg;
}

RawScene decode_scene(const SogsPackage& pkg) {
    if (pkg.version != kSogsVersion)
        raise(ErrorKind::VersionUnsupported, "package version " + std::to_string(pkg.version));
    if (pkg.count < 1) raise(ErrorKind::EmptyInput, "package holds no gaussians");
    if (pkg.bits < 1 || pkg.bits > 8)
        raise(ErrorKind::OutOfRange, "package bit depth " + std::to_string(pkg.bits));

    const std::vector<std::string> names = package_channel_names(pkg.sh_degree);
    if (pkg.channels.size() != names.size()) {
        for (std::size_t c = 0; c < names.size(); ++c) {
            if (c >= pkg.channels.size() || pkg.channels[c].name != names[c])
                raise(ErrorKind::ChannelCountMismatch,
                      "package is missing channel \"" + names[c] + "\"");
        }
        raise(ErrorKind::ChannelCountMismatch, "package has unexpected extra channels");
    }
    const std::size_t cells = static_cast<std::size_t>(pkg.grid_w) * pkg.grid_h;
    if (cells < static_cast<std::size_t>(pkg.count))
        raise(ErrorKind::ShapeMismatch, "grid smaller than the gaussian count");
    if (!pkg.permutation.empty() && pkg.permutation.size() != static_cast<std::size_t>(pkg.count))
        raise(ErrorKind::ShapeMismatch, "permutation length does not match the gaussian count");

    const std::size_t n = static_cast<std::size_t>(pkg.count);
    RawScene raw;
    raw.count = pkg.count;
    raw.sh_degree = pkg.sh_degree;
    raw.position.resize(n * 3);
    raw.normal.assign(n * 3, 0.0f);
    raw.f_dc.resize(n * 3);
    raw.f_rest.resize(n * static_cast<std::size_t>(sh_rest_width(pkg.sh_degree)));
    raw.opacity_logit.resize(n);
    raw.log_scale.resize(n * 3);
    raw.quat.resize(n * 4);

    std::vector<std::uint16_t> codes(n);
    for (std::size_t c = 0; c < names.size(); ++c) {
        const ChannelGrid& grid = pkg.channels[c];
        if (grid.name != names[c])
            raise(ErrorKind::ChannelCountMismatch, "package is missing channel \"" + names[c] + "\"");
        if (grid.codes.size() != cells)
            raise(ErrorKind::ShapeMismatch, "channel \"" + grid.name + "\" grid size mismatch");
        for (std::size_t i = 0; i < n; ++i) codes[i] = grid.codes[i];
        std::vector<double> values = dequantize_channel(codes, grid.vmin, grid.vmax, pkg.bits);
        std::vector<float> column(n);
        if (!pkg.permutation.empty()) {
            for (std::size_t slot = 0; slot < n; ++slot) {
                std::uint32_t orig = pkg.permutation[slot];
                if (orig >= n)
                    raise(ErrorKind::ShapeMismatch, "permutation index out of range");
                column[orig] = static_cast<float>(values[slot]);
            }
        } else {
            for (std::size_t slot = 0; slot < n; ++slot)
                column[slot] = static_cast<float>(values[slot]);
        }
        scatter_channel(raw, c, column);
    }
    validate_raw(raw);
    return raw;
}

CompressionReport compression_report(const RawScene& raw, std::uint64_t pkg_bytes) {
    CompressionReport rep;
    const std::uint64_t floats_per_gaussian = 17 + static_cast<std::uint64_t>(sh_rest_width(raw.sh_degree));
    rep.raw_bytes = static_cast<std::uint64_t>(raw.count) * floats_per_gaussian * 4;
    rep.packed_bytes = pkg_bytes;
    rep.ratio = pkg_bytes > 0 ? static_cast<double>(rep.raw_bytes) / static_cast<double>(pkg_bytes) : 0.0;
    return rep;
}

std::vector<std::pair<std::string, std::uint64_t>> package_png_sizes(const SogsPackage& pkg,
                                                                     int threads) {
    std::vector<std::pair<std::string, std::uint64_t>> sizes(pkg.channels.size());
    parallel_for(pkg.channels.size(), threads, [&](std::size_t c) {
        GrayImage img{pkg.grid_w, pkg.grid_h, pkg.channels[c].codes};
        sizes[c] = {pkg.channels[c].name, encode_png_gray8(img).size()};
    });
    return sizes;
}

void save_package(const SogsPackage& pkg, const std::string& dir, int threads) {
    fs::create_directories(dir);

    json meta;
    meta["version"] = pkg.version;
    meta["count"] = pkg.count;
    meta["grid_dims"] = {pkg.grid_w, pkg.grid_h};
    meta["sh_degree"] = pkg.sh_degree;
    meta["bits"] = pkg.bits;
    meta["has_permutation"] = !pkg.permutation.empty();
    json channels = json::array();
    for (const ChannelGrid& ch : pkg.channels) {
        channels.push_back({{"name", ch.name},
                            {"vmin", ch.vmin},
                            {"vmax", ch.vmax},
                            {"file", ch.name + ".png"}});
    }
    meta["channels"] = channels;

    std::vector<std::vector<std::uint8_t>> pngs(pkg.channels.size());
    parallel_for(pkg.channels.size(), threads, [&](std::size_t c) {
        GrayImage img{pkg.grid_w, pkg.grid_h, pkg.channels[c].codes};
        pngs[c] = encode_png_gray8(img);
    });

    auto write_file = [&](const fs::path& path, const void* data, std::size_t len) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) raise(ErrorKind::IoError, "cannot open \"" + path.string() + "\" for writing");
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
        if (!out) raise(ErrorKind::IoError, "short write to \"" + path.string() + "\"");
    };

    std::string meta_text = meta.dump(2);
    meta_text.push_back('\n');
    write_file(fs::path(dir) / "meta.json", meta_text.data(), meta_text.size());
    for (std::size_t c = 0; c < pkg.channels.size(); ++c)
        write_file(fs::path(dir) / (pkg.channels[c].name + ".png"), pngs[c].data(), pngs[c].size());

    if (!pkg.permutation.empty()) {
        std::vector<std::uint8_t> perm(pkg.permutation.size() * 4);
        for (std::size_t i = 0; i < pkg.permutation.size(); ++i) {
            std::uint32_t v = pkg.permutation[i];
            perm[i * 4 + 0] = static_cast<std::uint8_t>(v);
            perm[i * 4 + 1] = static_cast<std::uint8_t>(v >> 8);
            perm[i * 4 + 2] = static_cast<std::uint8_t>(v >> 16);
            perm[i * 4 + 3] = static_cast<std::uint8_t>(v >> 24);
        }
        write_file(fs::path(dir) / "perm.bin", perm.data(), perm.size());
    }
}

SogsPackage load_package(const std::string& dir) {
    std::ifstream meta_in(fs::path(dir) / "meta.json");
    if (!meta_in) raise(ErrorKind::IoError, "cannot open \"" + dir + "/meta.json\"");
    json meta;
    try {
        meta_in >> meta;
    } catch (const json::exception& e) {
        raise(ErrorKind::ParseError, std::string("meta.json: ") + e.what());
    }

    SogsPackage pkg;
    try {
        pkg.version = meta.at("version").get<int>();
        if (pkg.version != kSogsVersion)
            raise(ErrorKind::VersionUnsupported, "package version " + std::to_string(pkg.version));
        pkg.count = meta.at("count").get<std::int64_t>();
        pkg.grid_w = meta.at("grid_dims").at(0).get<std::uint32_t>();
        pkg.grid_h = meta.at("grid_dims").at(1).get<std::uint32_t>();
        pkg.sh_degree = meta.at("sh_degree").get<int>();
        pkg.bits = meta.value("bits", 8);

        for (const json& ch : meta.at("channels")) {
            ChannelGrid grid;
            grid.name = ch.at("name").get<std::string>();
            grid.vmin = ch.at("vmin").get<double>();
            grid.vmax = ch.at("vmax").get<double>();
            fs::path png_path = fs::path(dir) / ch.at("file").get<std::string>();
            std::ifstream png_in(png_path, std::ios::binary);
            if (!png_in)
                raise(ErrorKind::ChannelCountMismatch,
                      "channel \"" + grid.name + "\" file missing: " + png_path.string());
            std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(png_in)),
                                            std::istreambuf_iterator<char>());
            GrayImage img = decode_png_gray8(bytes);
            if (img.width != pkg.grid_w || img.height != pkg.grid_h)
                raise(ErrorKind::ShapeMismatch,
                      "channel \"" + grid.name + "\" grid does not match grid_dims");
            grid.codes = std::move(img.pixels);
            pkg.channels.push_back(std::move(grid));
        }

        if (meta.value("has_permutation", false)) {
            std::ifstream perm_in(fs::path(dir) / "perm.bin", std::ios::binary);
            if (!perm_in) raise(ErrorKind::IoError, "perm.bin missing");
            std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(perm_in)),
                                            std::istreambuf_iterator<char>());
            if (bytes.size() != static_cast<std::size_t>(pkg.count) * 4)
                raise(ErrorKind::ShapeMismatch, "perm.bin has the wrong size");
            pkg.permutation.resize(static_cast<std::size_t>(pkg.count));
            for (std::size_t i = 0; i < pkg.permutation.size(); ++i) {
                pkg.permutation[i] = static_cast<std::uint32_t>(bytes[i * 4]) |
                                     (static_cast<std::uint32_t>(bytes[i * 4 + 1]) << 8) |
                                     (static_cast<std::uint32_t>(bytes[i * 4 + 2]) << 16) |
                                     (static_cast<std::uint32_t>(bytes[i * 4 + 3]) << 24);
            }
        }
    } catch (const json::exception& e) {
        raise(ErrorKind::ParseError, std::string("meta.json: ") + e.what());
    }
    return pkg;
}

} // namespace f3dgs
