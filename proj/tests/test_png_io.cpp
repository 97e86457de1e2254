// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "f3dgs/png_io.hpp"
#include "f3dgs/error.hpp"
#include "f3dgs/rng.hpp"

using namespace f3dgs;

TEST_SUITE_BEGIN("png_io");

namespace {

GrayImage random_image(std::uint32_t w, std::uint32_t h, std::uint64_t seed) {
    Rng rng(seed);
    GrayImage img{w, h, {}};
    img.pixels.resize(static_cast<std::size_t>(w) * h);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.next_below(256));
    return img;
}

} // namespace

TEST_CASE("decode inverts encode for assorted shapes") {
    for (auto [w, h] : {std::pair<std::uint32_t, std::uint32_t>{1, 1},
                        {3, 2},
                        {64, 64},
                        {257, 3},
                        {5, 129}}) {
        GrayImage img = random_image(w, h, w * 1000 + h);
        std::vector<std::uint8_t> png = encode_png_gray8(img);
        GrayImage back = decode_png_gray8(png);
        REQUIRE(back.width == w);
        REQUIRE(back.height == h);
        CHECK(back.pixels == img.pixels);
    }
}

TEST_CASE("smooth gradients compress well below raw size") {
    GrayImage img{256, 256, {}};
    img.pixels.resize(256 * 256);
    for (std::uint32_t y = 0; y < 256; ++y)
        for (std::uint32_t x = 0; x < 256; ++x)
            img.pixels[y * 256 + x] = static_cast<std::uint8_t>((x + y) / 2);
    std::vector<std::uint8_t> png = encode_png_gray8(img);
    CHECK(png.size() < img.pixels.size() / 4);
    CHECK(decode_png_gray8(png).pixels == img.pixels);
}

TEST_CASE("encoding is deterministic") {
    GrayImage img = random_image(33, 17, 99);
    CHECK(encode_png_gray8(img) == encode_png_gray8(img));
}

TEST_CASE("damage is detected") {
    GrayImage img = random_image(16, 16, 4);
    std::vector<std::uint8_t> png = encode_png_gray8(img);

    SUBCASE("bad signature") {
        std::vector<std::uint8_t> bad = png;
        bad[1] = 'X';
        CHECK_THROWS_AS(decode_png_gray8(bad), Error);
    }
    SUBCASE("flipped payload byte breaks the CRC") {
        std::vector<std::uint8_t> bad = png;
        bad[bad.size() / 2] ^= 0x40;
        try {
            decode_png_gray8(bad);
            FAIL("expected CorruptPng");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::CorruptPng);
        }
    }
    SUBCASE("truncated file") {
        std::vector<std::uint8_t> bad(png.begin(), png.begin() + static_cast<std::ptrdiff_t>(png.size() / 2));
        CHECK_THROWS_AS(decode_png_gray8(bad), Error);
    }
}

TEST_SUITE_END();
