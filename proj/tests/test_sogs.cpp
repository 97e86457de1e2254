// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "f3dgs/sogs.hpp"
#include "f3dgs/png_io.hpp"
#include "support/test_util.hpp"

using namespace f3dgs;
using namespace f3dgs::testutil;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("sogs");

TEST_CASE("quantize endpoints, degenerate ranges, error bound") {
    SUBCASE("endpoints land on 0 and 255") {
        std::vector<float> v = {0.0f, 1.0f};
        QuantizedChannel q = quantize_channel(v, 8);
        CHECK(q.codes[0] == 0);
        CHECK(q.codes[1] == 255);
        CHECK(q.vmin == 0.0);
        CHECK(q.vmax == 1.0);
    }
    SUBCASE("constant channel maps to zero codes") {
        std::vector<float> v = {7.0f, 7.0f, 7.0f};
        QuantizedChannel q = quantize_channel(v, 8);
        CHECK(q.codes == std::vector<std::uint16_t>{0, 0, 0});
        CHECK(q.vmin == 7.0);
        CHECK(q.vmax == 7.0);
        std::vector<double> back = dequantize_channel(q.codes, q.vmin, q.vmax, 8);
        CHECK(back == std::vector<double>{7.0, 7.0, 7.0}); // lossless on constants
    }
    SUBCASE("reconstruction error stays within half a step") {
        Rng rng(5);
        std::vector<float> v(1000);
        for (float& x : v) x = static_cast<float>(rng.uniform(-3.0, 9.0));
        QuantizedChannel q = quantize_channel(v, 8);
        std::vector<double> back = dequantize_channel(q.codes, q.vmin, q.vmax, 8);
        double bound = (q.vmax - q.vmin) / 510.0 + 1e-9;
        for (std::size_t i = 0; i < v.size(); ++i)
            CHECK(std::abs(back[i] - static_cast<double>(v[i])) <= bound);
    }
    SUBCASE("non-finite input is rejected") {
        std::vector<float> v = {1.0f, std::numeric_limits<float>::infinity()};
        CHECK_THROWS_AS(quantize_channel(v, 8), Error);
    }
}

TEST_CASE("dequantize endpoints and the exhaustive fixpoint") {
    std::vector<std::uint16_t> codes(256);
    std::iota(codes.begin(), codes.end(), std::uint16_t{0});
    std::vector<double> values = dequantize_channel(codes, -1.0, 3.0, 8);
    CHECK(values.front() == -1.0);
    CHECK(values.back() == 3.0);
    QuantizedChannel q = quantize_channel(values, 8);
    CHECK(q.codes == codes); // quantize(dequantize(q)) == q for all 256 codes

    SUBCASE("code out of range") {
        std::vector<std::uint16_t> bad = {256};
        CHECK_THROWS_AS(dequantize_channel(bad, 0.0, 1.0, 8), Error);
    }
}

namespace {

// brute-force minimal 2x2 edge cost over all 24 placements of 4 scalars
double brute_force_min_cost(const std::array<double, 4>& values) {
    std::array<int, 4> perm = {0, 1, 2, 3};
    double best = std::numeric_limits<double>::infinity();
    do {
        double c = std::abs(values[perm[0]] - values[perm[1]]) +
                   std::abs(values[perm[2]] - values[perm[3]]) +
                   std::abs(values[perm[0]] - values[perm[2]]) +
                   std::abs(values[perm[1]] - values[perm[3]]);
        best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

} // namespace

TEST_CASE("grid sort reaches the brute-force minimum on every 2x2 input") {
    std::array<double, 4> base = {0.0, 1.0, 2.0, 3.0};
    std::array<int, 4> order = {0, 1, 2, 3};
    do {
        FeatureMatrix m;
        m.rows = 4;
        m.cols = 1;
        for (int i = 0; i < 4; ++i) m.data.push_back(base[order[static_cast<std::size_t>(i)]]);
        SortResult sorted = sort_for_coherence(m, 3);

        // normalized values as the sorter sees them
        std::array<double, 4> norm;
        for (int i = 0; i < 4; ++i) norm[static_cast<std::size_t>(i)] = m.data[static_cast<std::size_t>(i)] / 3.0;
        double got = sorted.pass_costs.back();
        CHECK(got == doctest::Approx(brute_force_min_cost(norm)).epsilon(1e-12));
    } while (std::next_permutation(order.begin(), order.end()));
}

TEST_CASE("sort_for_coherence basics") {
    SUBCASE("single row") {
        FeatureMatrix m;
        m.rows = 1;
        m.cols = 1;
        m.data = {5.0};
        SortResult sorted = sort_for_coherence(m, 2);
        CHECK(sorted.permutation == std::vector<std::uint32_t>{0});
    }
    SUBCASE("identical rows keep the identity layout") {
        FeatureMatrix m;
        m.rows = 6;
        m.cols = 2;
        m.data.assign(12, 0.5);
        SortResult sorted = sort_for_coherence(m, 2);
        std::vector<std::uint32_t> identity = {0, 1, 2, 3, 4, 5};
        CHECK(sorted.permutation == identity);
    }
    SUBCASE("permutation is a bijection and refinement never raises the cost") {
        RawScene raw = make_coherent_raw(500, 0, 21);
        FeatureMatrix m;
        m.rows = raw.count;
        m.cols = 3;
        for (std::int64_t i = 0; i < raw.count; ++i)
            for (int k = 0; k < 3; ++k) m.data.push_back(raw.position[i * 3 + k]);
        SortResult sorted = sort_for_coherence(m, 4);
        std::vector<bool> seen(500, false);
        for (std::uint32_t p : sorted.permutation) {
            REQUIRE(p < 500);
            REQUIRE_FALSE(seen[p]);
            seen[p] = true;
        }
        for (std::size_t i = 1; i < sorted.pass_costs.size(); ++i)
            CHECK(sorted.pass_costs[i] <= sorted.pass_costs[i - 1] + 1e-9);
    }
}

TEST_CASE("encode geometry and padding") {
    SUBCASE("grid dims follow ceil arithmetic") {
        CHECK(grid_dims(5) == std::pair<std::uint32_t, std::uint32_t>{3, 2});
        CHECK(grid_dims(1) == std::pair<std::uint32_t, std::uint32_t>{1, 1});
        CHECK(grid_dims(9) == std::pair<std::uint32_t, std::uint32_t>{3, 3});
    }
    SUBCASE("identical gaussians produce constant grids") {
        RawScene raw = make_random_raw(1, 0, 31);
        RawScene four = raw;
        four.count = 4;
        auto repeat = [&](std::vector<float>& v) {
            std::vector<float> one = v;
            for (int i = 0; i < 3; ++i) v.insert(v.end(), one.begin(), one.end());
        };
        repeat(four.position);
        repeat(four.normal);
        repeat(four.f_dc);
        repeat(four.opacity_logit);
        repeat(four.log_scale);
        repeat(four.quat);
        SogsPackage pkg = encode_scene(four);
        for (const ChannelGrid& ch : pkg.channels) {
            for (std::uint8_t code : ch.codes) CHECK(code == ch.codes[0]);
        }
    }
    SUBCASE("n=5 pads exactly one cell") {
        RawScene raw = make_random_raw(5, 0, 33);
        SogsPackage pkg = encode_scene(raw);
        CHECK(pkg.grid_w == 3);
        CHECK(pkg.grid_h == 2);
        CHECK(pkg.channels[0].codes.size() == 6);
    }
}

TEST_CASE("decode(encode(s)) equals quantize-then-dequantize exactly") {
    RawScene raw = make_coherent_raw(10000, 3, 35);
    EncodeOptions opts;
    opts.store_permutation = true;
    SogsPackage pkg = encode_scene(raw, opts);
    RawScene decoded = decode_scene(pkg);
    CHECK(decoded.count == raw.count);

    // componentwise oracle on the original channels, in original order
    const std::vector<std::string> names = package_channel_names(raw.sh_degree);
    for (std::size_t c = 0; c < names.size(); ++c) {
        std::vector<float> channel(static_cast<std::size_t>(raw.count));
        std::vector<float> decoded_channel(static_cast<std::size_t>(raw.count));
        for (std::int64_t i = 0; i < raw.count; ++i) {
            auto pick = [&](const RawScene& s) {
                if (c < 3) return s.position[i * 3 + c];
                if (c == 3) return s.opacity_logit[i];
                if (c < 7) return s.log_scale[i * 3 + (c - 4)];
                if (c < 11) return s.quat[i * 4 + (c - 7)];
                if (c < 14) return s.f_dc[i * 3 + (c - 11)];
                return s.f_rest[i * 45 + static_cast<std::int64_t>(c - 14)];
            };
            channel[static_cast<std::size_t>(i)] = pick(raw);
            decoded_channel[static_cast<std::size_t>(i)] = pick(decoded);
        }
        QuantizedChannel q = quantize_channel(channel, 8);
        std::vector<double> recon = dequantize_channel(q.codes, q.vmin, q.vmax, 8);
        std::vector<float> expect(recon.size());
        for (std::size_t i = 0; i < recon.size(); ++i) expect[i] = static_cast<float>(recon[i]);
        REQUIRE(decoded_channel == expect); // bit-exact per channel
    }
}

TEST_CASE("package io round trips through disk") {
    RawScene raw = make_coherent_raw(300, 0, 41);
    EncodeOptions opts;
    opts.store_permutation = true;
    SogsPackage pkg = encode_scene(raw, opts);

    fs::path dir = fs::temp_directory_path() / "f3dgs_sogs_test";
    fs::remove_all(dir);
    save_package(pkg, dir.string());
    SogsPackage loaded = load_package(dir.string());
    CHECK(loaded.count == pkg.count);
    CHECK(loaded.permutation == pkg.permutation);
    REQUIRE(loaded.channels.size() == pkg.channels.size());
    for (std::size_t c = 0; c < pkg.channels.size(); ++c) {
        CHECK(loaded.channels[c].codes == pkg.channels[c].codes);
        CHECK(loaded.channels[c].vmin == pkg.channels[c].vmin);
        CHECK(loaded.channels[c].vmax == pkg.channels[c].vmax);
    }
    RawScene a = decode_scene(pkg);
    RawScene b = decode_scene(loaded);
    CHECK(raw_equal_bits(a, b));

    SUBCASE("missing channel file names the channel") {
        fs::remove(dir / "opacity.png");
        try {
            load_package(dir.string());
            FAIL("expected ChannelCountMismatch");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::ChannelCountMismatch);
            CHECK(std::string(e.what()).find("opacity") != std::string::npos);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("decode restores the original order when the permutation is stored") {
    RawScene raw = make_random_raw(64, 0, 47);
    EncodeOptions with_perm;
    with_perm.store_permutation = true;
    RawScene restored = decode_scene(encode_scene(raw, with_perm));

    // opacity must match the quantized originals in original order
    QuantizedChannel oq = quantize_channel(raw.opacity_logit, 8);
    std::vector<double> recon = dequantize_channel(oq.codes, oq.vmin, oq.vmax, 8);
    std::vector<float> expect(recon.size());
    for (std::size_t i = 0; i < recon.size(); ++i) expect[i] = static_cast<float>(recon[i]);
    CHECK(restored.opacity_logit == expect);

    EncodeOptions no_perm;
    SogsPackage pkg = encode_scene(raw, no_perm);
    CHECK(pkg.permutation.empty());
    RawScene sorted_order = decode_scene(pkg);
    CHECK(sorted_order.count == raw.count);
    // same multiset of values, generally a different order
    std::vector<float> a = sorted_order.opacity_logit, b = expect;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
}

TEST_CASE("constant scene decodes exactly") {
    RawScene raw = make_random_raw(1, 0, 53);
    RawScene big = raw;
    big.count = 9;
    auto repeat = [&](std::vector<float>& v) {
        std::vector<float> one = v;
        for (int i = 0; i < 8; ++i) v.insert(v.end(), one.begin(), one.end());
    };
    repeat(big.position);
    repeat(big.normal);
    repeat(big.f_dc);
    repeat(big.opacity_logit);
    repeat(big.log_scale);
    repeat(big.quat);
    EncodeOptions opts;
    opts.store_permutation = true;
    RawScene back = decode_scene(encode_scene(big, opts));
    CHECK(raw_equal_bits(back, big));
}

TEST_CASE("compression report arithmetic") {
    RawScene raw = make_random_raw(1000, 3, 59);
    CompressionReport rep = compression_report(raw, 50000);
    CHECK(rep.raw_bytes == 248000);
    CHECK(rep.ratio == doctest::Approx(4.96));

    // 32-bit floats to 8-bit codes is exactly 4x before PNG
    SogsPackage pkg = encode_scene(raw);
    std::uint64_t code_bytes =
        static_cast<std::uint64_t>(raw.count) * pkg.channels.size(); // first N cells per channel
    std::uint64_t channel_float_bytes = static_cast<std::uint64_t>(raw.count) * 4 * pkg.channels.size();
    CHECK(channel_float_bytes == 4 * code_bytes);
}

TEST_CASE("sorted layout compresses better than a random one") {
    RawScene raw = make_coherent_raw(5000, 0, 61);
    SogsPackage sorted_pkg = encode_scene(raw);

    // random permutation instead of the coherence sort: shuffle the scene first
    RawScene shuffled = raw;
    Rng rng(999);
    std::vector<std::uint32_t> perm(static_cast<std::size_t>(raw.count));
    std::iota(perm.begin(), perm.end(), 0u);
    shuffle(perm, rng);
    for (std::int64_t i = 0; i < raw.count; ++i) {
        std::uint32_t j = perm[static_cast<std::size_t>(i)];
        for (int k = 0; k < 3; ++k) {
            shuffled.position[i * 3 + k] = raw.position[j * 3 + k];
            shuffled.f_dc[i * 3 + k] = raw.f_dc[j * 3 + k];
            shuffled.log_scale[i * 3 + k] = raw.log_scale[j * 3 + k];
        }
        shuffled.opacity_logit[i] = raw.opacity_logit[j];
        for (int k = 0; k < 4; ++k) shuffled.quat[i * 4 + k] = raw.quat[j * 4 + k];
    }
    // quantize the shuffled scene without sorting by laying codes in row order
    SogsPackage random_pkg = sorted_pkg;
    const std::vector<std::string> names = package_channel_names(0);
    for (std::size_t c = 0; c < names.size(); ++c) {
        std::vector<float> col(static_cast<std::size_t>(raw.count));
        for (std::int64_t i = 0; i < raw.count; ++i) {
            if (c < 3) col[static_cast<std::size_t>(i)] = shuffled.position[i * 3 + c];
            else if (c == 3) col[static_cast<std::size_t>(i)] = shuffled.opacity_logit[i];
            else if (c < 7) col[static_cast<std::size_t>(i)] = shuffled.log_scale[i * 3 + (c - 4)];
            else if (c < 11) col[static_cast<std::size_t>(i)] = shuffled.quat[i * 4 + (c - 7)];
            else col[static_cast<std::size_t>(i)] = shuffled.f_dc[i * 3 + (c - 11)];
        }
        QuantizedChannel q = quantize_channel(col, 8);
        for (std::int64_t i = 0; i < raw.count; ++i)
            random_pkg.channels[c].codes[static_cast<std::size_t>(i)] =
                static_cast<std::uint8_t>(q.codes[static_cast<std::size_t>(i)]);
    }

    std::uint64_t sorted_bytes = 0, random_bytes = 0;
    for (const auto& [name, bytes] : package_png_sizes(sorted_pkg)) sorted_bytes += bytes;
    for (const auto& [name, bytes] : package_png_sizes(random_pkg)) random_bytes += bytes;
    CHECK(sorted_bytes < random_bytes);
}

TEST_CASE("encoding is deterministic") {
    RawScene raw = make_coherent_raw(200, 0, 67);
    SogsPackage a = encode_scene(raw);
    SogsPackage b = encode_scene(raw);
    REQUIRE(a.channels.size() == b.channels.size());
    for (std::size_t c = 0; c < a.channels.size(); ++c) CHECK(a.channels[c].codes == b.channels[c].codes);

    fs::path dir_a = fs::temp_directory_path() / "f3dgs_det_a";
    fs::path dir_b = fs::temp_directory_path() / "f3dgs_det_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    save_package(a, dir_a.string());
    save_package(b, dir_b.string(), 4);
    for (const auto& entry : fs::directory_iterator(dir_a)) {
        std::ifstream fa(entry.path(), std::ios::binary);
        std::ifstream fb(dir_b / entry.path().filename(), std::ios::binary);
        std::vector<char> ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
        std::vector<char> bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
        CHECK(ba == bb);
    }
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_SUITE_END();
