// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstring>
#include <string>
#include <vector>

#include "f3dgs/ply_io.hpp"
#include "support/test_util.hpp"

using namespace f3dgs;
using namespace f3dgs::testutil;

namespace {

void append_float(std::vector<std::uint8_t>& out, float v) {
    std::uint8_t b[4];
    std::memcpy(b, &v, 4);
    out.insert(out.end(), b, b + 4);
}

// hand-built canonical header, independent of write_ply
std::vector<std::uint8_t> build_fixture(std::int64_t n, int sh_degree) {
    const int rest = sh_rest_width(sh_degree);
    std::string header = "ply\nformat binary_little_endian 1.0\nelement vertex " +
                         std::to_string(n) + "\n";
    for (const char* p : {"x", "y", "z", "nx", "ny", "nz"})
        header += std::string("property float ") + p + "\n";
    for (int k = 0; k < 3; ++k) header += "property float f_dc_" + std::to_string(k) + "\n";
    for (int k = 0; k < rest; ++k) header += "property float f_rest_" + std::to_string(k) + "\n";
    header += "property float opacity\n";
    for (int k = 0; k < 3; ++k) header += "property float scale_" + std::to_string(k) + "\n";
    for (int k = 0; k < 4; ++k) header += "property float rot_" + std::to_string(k) + "\n";
    header += "end_header\n";

    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    for (std::int64_t i = 0; i < n; ++i) {
        int floats = 17 + rest;
        for (int k = 0; k < floats; ++k) {
            float v = static_cast<float>(i) + 0.125f * static_cast<float>(k);
            if (k >= 3 && k < 6) v = 0.0f; // normals
            if (k == floats - 4) v = 1.0f; // keep rot_0 nonzero
            append_float(bytes, v);
        }
    }
    return bytes;
}

} // namespace

TEST_SUITE_BEGIN("ply_io");

TEST_CASE("minimal one-vertex file with all 62 floats parses") {
    std::vector<std::uint8_t> bytes = build_fixture(1, 3);
    RawScene raw = parse_ply(bytes);
    CHECK(raw.count == 1);
    CHECK(raw.sh_degree == 3);
    CHECK(raw.position[0] == 0.0f);
    CHECK(raw.f_dc[0] == doctest::Approx(0.125f * 6));
    CHECK(raw.extras.empty());
}

TEST_CASE("truncation reports the exact expected byte count") {
    std::vector<std::uint8_t> bytes = build_fixture(10, 3);
    bytes.resize(bytes.size() - 100);
    try {
        parse_ply(bytes);
        FAIL("expected TruncatedBody");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::TruncatedBody);
        CHECK(std::string(e.what()).find(std::to_string(62 * 4 * 10)) != std::string::npos);
    }
}

TEST_CASE("write then parse is value-exact; parse then write is byte-exact") {
    for (auto [n, degree] : std::vector<std::pair<std::int64_t, int>>{{1, 0}, {2, 2}, {1000, 3}}) {
        RawScene raw = make_random_raw(n, degree, 1000 + static_cast<std::uint64_t>(n));
        std::vector<std::uint8_t> bytes = write_ply(raw);
        RawScene back = parse_ply(bytes);
        CHECK(raw_equal_bits(raw, back));
        std::vector<std::uint8_t> again = write_ply(back);
        CHECK(bytes == again);
    }
}

TEST_CASE("written body sizes are exact") {
    RawScene one = make_random_raw(1, 0, 3);
    std::vector<std::uint8_t> bytes = write_ply(one);
    PlyHeader header = sniff(bytes);
    CHECK(bytes.size() - header.header_bytes == 17 * 4);

    RawScene two = make_random_raw(2, 3, 4);
    bytes = write_ply(two);
    header = sniff(bytes);
    CHECK(bytes.size() - header.header_bytes == 2 * 62 * 4);
}

TEST_CASE("sniff reads counts and infers the SH degree") {
    std::vector<std::uint8_t> bytes = build_fixture(42, 3);
    PlyHeader h = sniff(bytes);
    CHECK(h.vertex_count == 42);
    CHECK(h.sh_degree == 3);
    CHECK(h.vertex_stride == 62 * 4);

    bytes = write_ply(make_random_raw(5, 2, 5));
    h = sniff(bytes);
    CHECK(h.sh_degree == 2); // K = 24 rest properties
}

TEST_CASE("shuffled property order parses to the same scene") {
    RawScene raw = make_random_raw(20, 0, 6);
    std::vector<std::uint8_t> canonical = write_ply(raw);

    // rebuild the same content with a scrambled property order
    std::string header = "ply\nformat binary_little_endian 1.0\nelement vertex 20\n";
    for (const char* p : {"opacity", "rot_0", "rot_1", "rot_2", "rot_3", "x", "y", "z",
                          "scale_0", "scale_1", "scale_2", "f_dc_0", "f_dc_1", "f_dc_2"})
        header += std::string("property float ") + p + "\n";
    header += "end_header\n";
    std::vector<std::uint8_t> shuffled(header.begin(), header.end());
    for (std::int64_t i = 0; i < raw.count; ++i) {
        append_float(shuffled, raw.opacity_logit[i]);
        for (int k = 0; k < 4; ++k) append_float(shuffled, raw.quat[i * 4 + k]);
        for (int k = 0; k < 3; ++k) append_float(shuffled, raw.position[i * 3 + k]);
        for (int k = 0; k < 3; ++k) append_float(shuffled, raw.log_scale[i * 3 + k]);
        for (int k = 0; k < 3; ++k) append_float(shuffled, raw.f_dc[i * 3 + k]);
    }

    RawScene a = parse_ply(canonical);
    RawScene b = parse_ply(shuffled);
    // normals absent in the shuffled variant default to zero
    CHECK(raw_equal_bits(a, b));
}

TEST_CASE("error taxonomy") {
    SUBCASE("bad magic") {
        std::vector<std::uint8_t> bytes = {'n', 'o', 'p', 'e', '\n'};
        try {
            parse_ply(bytes);
            FAIL("expected BadMagic");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::BadMagic);
        }
    }
    SUBCASE("ascii format rejected") {
        std::string text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n";
        std::vector<std::uint8_t> bytes(text.begin(), text.end());
        try {
            parse_ply(bytes);
            FAIL("expected UnsupportedFormat");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::UnsupportedFormat);
        }
    }
    SUBCASE("big endian rejected") {
        std::string text =
            "ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n";
        std::vector<std::uint8_t> bytes(text.begin(), text.end());
        CHECK_THROWS_AS(parse_ply(bytes), Error);
    }
    SUBCASE("missing property is named") {
        std::string header = "ply\nformat binary_little_endian 1.0\nelement vertex 1\n";
        for (const char* p : {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "scale_0", "scale_1",
                              "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"})
            header += std::string("property float ") + p + "\n";
        header += "end_header\n";
        std::vector<std::uint8_t> bytes(header.begin(), header.end());
        bytes.resize(bytes.size() + 13 * 4, 0);
        try {
            parse_ply(bytes);
            FAIL("expected MissingProperty");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::MissingProperty);
            CHECK(std::string(e.what()).find("opacity") != std::string::npos);
        }
    }
}

TEST_CASE("unknown properties survive a parse/write round trip") {
    RawScene raw = make_random_raw(3, 0, 7);
    ExtraProperty extra;
    extra.name = "confidence";
    extra.type = "float";
    extra.value_size = 4;
    extra.data.resize(3 * 4);
    float values[3] = {0.25f, 0.5f, 0.75f};
    std::memcpy(extra.data.data(), values, sizeof(values));
    raw.extras.push_back(extra);

    std::vector<std::uint8_t> bytes = write_ply(raw);
    RawScene back = parse_ply(bytes);
    REQUIRE(back.extras.size() == 1);
    CHECK(back.extras[0].name == "confidence");
    CHECK(back.extras[0].type == "float");
    CHECK(back.extras[0].data == extra.data);
    CHECK(write_ply(back) == bytes);
}

TEST_CASE("trailing bytes beyond the declared body are ignored") {
    RawScene raw = make_random_raw(4, 0, 8);
    std::vector<std::uint8_t> bytes = write_ply(raw);
    bytes.push_back(0xAB);
    bytes.push_back(0xCD);
    RawScene back = parse_ply(bytes);
    CHECK(raw_equal_bits(raw, back));
}

TEST_SUITE_END();
