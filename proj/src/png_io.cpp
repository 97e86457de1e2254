// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#include "f3dgs/png_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>

#include "f3dgs/error.hpp"

namespace f3dgs {

namespace {

constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t read_u32_be(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::uint8_t* data, std::size_t len) {
    put_u32_be(out, static_cast<std::uint32_t>(len));
    std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    if (len > 0) out.insert(out.end(), data, data + len);
    std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, out.data() + crc_start, static_cast<uInt>(4 + len)));
    put_u32_be(out, crc);
}

std::uint8_t paeth(std::uint8_t a, std::uint8_t b, std::uint8_t c) {
    int p = static_cast<int>(a) + static_cast<int>(b) - static_cast<int>(c);
    int pa = std::abs(p - static_cast<int>(a));
    int pb = std::abs(p - static_cast<int>(b));
    int pc = std::abs(p - static_cast<int>(c));
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

// previous-row pointer is null for the first scanline
void filter_row(int filter, const std::uint8_t* row, const std::uint8_t* prev,
                std::uint32_t width, std::uint8_t* out) {
    for (std::uint32_t x = 0; x < width; ++x) {
        std::uint8_t left = x > 0 ? row[x - 1] : 0;
        std::uint8_t up = prev ? prev[x] : 0;
        std::uint8_t ul = (prev && x > 0) ? prev[x - 1] : 0;
        int v = row[x];
        switch (filter) {
        case 0: break;
        case 1: v -= left; break;
        case 2: v -= up; break;
        case 3: v -= (left + up) / 2; break;
        case 4: v -= paeth(left, up, ul); break;
        }
        out[x] = static_cast<std::uint8_t>(v & 0xff);
    }
}

std::vector<std::uint8_t> zlib_compress(const std::vector<std::uint8_t>& in) {
    uLongf bound = compressBound(static_cast<uLong>(in.size()));
    std::vector<std::uint8_t> out(bound);
    int rc = compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()),
                       Z_BEST_COMPRESSION);
    if (rc != Z_OK) raise(ErrorKind::CorruptPng, "zlib compression failed");
    out.resize(bound);
    return out;
}

std::vector<std::uint8_t> zlib_decompress(const std::vector<std::uint8_t>& in,
                                          std::size_t expected) {
    std::vector<std::uint8_t> out(expected);
    uLongf len = static_cast<uLongf>(expected);
    int rc = uncompress(out.data(), &len, in.data(), static_cast<uLong>(in.size()));
    if (rc != Z_OK || len != expected)
        raise(ErrorKind::CorruptPng, "inflate failed or produced an unexpected byte count");
    return out;
}

} // namespace

std::vector<std::uint8_t> encode_png_gray8(const GrayImage& image) {
    const std::uint32_t w = image.width;
    const std::uint32_t h = image.height;
    if (w == 0 || h == 0 || image.pixels.size() != static_cast<std::size_t>(w) * h)
        raise(ErrorKind::CorruptPng, "image dimensions do not match the pixel buffer");

    // filter each scanline with the minimum-sum-of-absolute-deltas heuristic
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(h) * (w + 1));
    std::vector<std::uint8_t> candidate(w);
    std::vector<std::uint8_t> best(w);
    for (std::uint32_t y = 0; y < h; ++y) {
        const std::uint8_t* row = image.pixels.data() + static_cast<std::size_t>(y) * w;
        const std::uint8_t* prev = y > 0 ? row - w : nullptr;
        int best_filter = 0;
        long best_score = -1;
        for (int f = 0; f < 5; ++f) {
            filter_row(f, row, prev, w, candidate.data());
            long score = 0;
            for (std::uint32_t x = 0; x < w; ++x) {
                int b = candidate[x];
                score += b < 128 ? b : 256 - b;
            }
            if (best_score < 0 || score < best_score) {
                best_score = score;
                best_filter = f;
                best.swap(candidate);
            }
        }
        raw.push_back(static_cast<std::uint8_t>(best_filter));
        raw.insert(raw.end(), best.begin(), best.end());
    }

    std::vector<std::uint8_t> idat = zlib_compress(raw);

    std::vector<std::uint8_t> out;
    out.reserve(idat.size() + 64);
    out.insert(out.end(), kSignature, kSignature + 8);
    std::uint8_t ihdr[13];
    ihdr[0] = static_cast<std::uint8_t>(w >> 24);
    ihdr[1] = static_cast<std::uint8_t>(w >> 16);
    ihdr[2] = static_cast<std::uint8_t>(w >> 8);
    ihdr[3] = static_cast<std::uint8_t>(w);
    ihdr[4] = static_cast<std::uint8_t>(h >> 24);
    ihdr[5] = static_cast<std::uint8_t>(h >> 16);
    ihdr[6] = static_cast<std::uint8_t>(h >> 8);
    ihdr[7] = static_cast<std::uint8_t>(h);
    ihdr[8] = 8;  // bit depth
    ihdr[9] = 0;  // grayscale
    ihdr[10] = 0; // compression
    ihdr[11] = 0; // filter method
    ihdr[12] = 0; // no interlace
    append_chunk(out, "IHDR", ihdr, sizeof(ihdr));
    append_chunk(out, "IDAT", idat.data(), idat.size());
    append_chunk(out, "IEND", nullptr, 0);
    return out;
}

GrayImage decode_png_gray8(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
        raise(ErrorKind::CorruptPng, "missing PNG signature");

    GrayImage img;
    std::vector<std::uint8_t> idat;
    bool saw_ihdr = false;
    bool saw_iend = false;
    std::size_t pos = 8;

    while (pos + 12 <= bytes.size()) {
        std::uint32_t len = read_u32_be(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) raise(ErrorKind::CorruptPng, "truncated chunk");
        const std::uint8_t* type = bytes.data() + pos + 4;
        const std::uint8_t* data = bytes.data() + pos + 8;
        std::uint32_t stored_crc = read_u32_be(data + len);
        std::uint32_t crc =
            static_cast<std::uint32_t>(crc32(0L, type, static_cast<uInt>(4 + len)));
        if (crc != stored_crc) raise(ErrorKind::CorruptPng, "chunk CRC mismatch");

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) raise(ErrorKind::CorruptPng, "bad IHDR length");
            img.width = read_u32_be(data);
            img.height = read_u32_be(data + 4);
            if (data[8] != 8 || data[9] != 0 || data[10] != 0 || data[11] != 0 || data[12] != 0)
                raise(ErrorKind::CorruptPng, "only 8-bit non-interlaced grayscale is supported");
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            if (!saw_ihdr) raise(ErrorKind::CorruptPng, "IDAT before IHDR");
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
            break;
        }
        // ancillary chunks are skipped
        pos += 12 + len;
    }
    if (!saw_ihdr || !saw_iend) raise(ErrorKind::CorruptPng, "missing IHDR or IEND");
    if (img.width == 0 || img.height == 0) raise(ErrorKind::CorruptPng, "zero image dimension");

    const std::size_t w = img.width;
    const std::size_t h = img.height;
    std::vector<std::uint8_t> raw = zlib_decompress(idat, h * (w + 1));

    img.pixels.resize(w * h);
    for (std::size_t y = 0; y < h; ++y) {
        int filter = raw[y * (w + 1)];
        const std::uint8_t* src = raw.data() + y * (w + 1) + 1;
        std::uint8_t* dst = img.pixels.data() + y * w;
        const std::uint8_t* prev = y > 0 ? dst - w : nullptr;
        for (std::size_t x = 0; x < w; ++x) {
            std::uint8_t left = x > 0 ? dst[x - 1] : 0;
            std::uint8_t up = prev ? prev[x] : 0;
            std::uint8_t ul = (prev && x > 0) ? prev[x - 1] : 0;
            int v = src[x];
            switch (filter) {
            case 0: break;
            case 1: v += left; break;
            case 2: v += up; break;
            case 3: v += (left + up) / 2; break;
            case 4: v += paeth(left, up, ul); break;
            default: raise(ErrorKind::CorruptPng, "unknown scanline filter");
            }
            dst[x] = static_cast<std::uint8_t>(v & 0xff);
        }
    }
    return img;
}

} // namespace f3dgs
