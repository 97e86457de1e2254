// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#include "f3dgs/ply_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "ply_io assumes a little-endian host");

namespace f3dgs {

namespace {

std::size_t scalar_size(const std::string& type) {
    if (type == "char" || type == "int8" || type == "uchar" || type == "uint8") return 1;
    if (type == "short" || type == "int16" || type == "ushort" || type == "uint16") return 2;
    if (type == "int" || type == "int32" || type == "uint" || type == "uint32") return 4;
    if (type == "float" || type == "float32") return 4;
    if (type == "double" || type == "float64") return 8;
    return 0;
}

bool is_float32(const std::string& type) { return type == "float" || type == "float32"; }

struct ParsedHeader {
    PlyHeader header;
    std::vector<std::size_t> offsets; // byte offset of each property within a vertex
};

ParsedHeader parse_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "ply", 3) != 0)
        raise(ErrorKind::BadMagic, "input does not start with the ASCII magic \"ply\"");

    ParsedHeader out;
    std::size_t pos = 0;
    bool saw_format = false;
    bool in_vertex_element = false;
    bool saw_vertex_element = false;
    bool done = false;

    auto next_line = [&]() -> std::optional<std::string> {
        if (pos >= bytes.size()) return std::nullopt;
        std::size_t end = pos;
        while (end < bytes.size() && bytes[end] != '\n') ++end;
        if (end == bytes.size())
            raise(ErrorKind::UnsupportedFormat, "header is missing end_header");
        std::string line(reinterpret_cast<const char*>(bytes.data() + pos), end - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = end + 1;
        return line;
    };

    std::string first = *next_line();
    if (first != "ply") raise(ErrorKind::BadMagic, "first header line must be exactly \"ply\"");

    while (auto maybe_line = next_line()) {
        const std::string& line = *maybe_line;
        std::istringstream iss(line);
        std::string keyword;
        iss >> keyword;
        if (keyword == "comment" || keyword == "obj_info" || keyword.empty()) continue;
        if (keyword == "format") {
            std::string fmt, version;
            iss >> fmt >> version;
            if (fmt != "binary_little_endian" || version != "1.0")
                raise(ErrorKind::UnsupportedFormat,
                      "only binary_little_endian 1.0 is supported, got \"" + fmt + " " + version + "\"");
            saw_format = true;
        } else if (keyword == "element") {
            std::string name;
            std::int64_t count = 0;
            iss >> name >> count;
            if (name != "vertex")
                raise(ErrorKind::UnsupportedFormat, "unsupported element \"" + name + "\"");
            if (saw_vertex_element)
                raise(ErrorKind::UnsupportedFormat, "duplicate vertex element");
            out.header.vertex_count = count;
            in_vertex_element = true;
            saw_vertex_element = true;
        } else if (keyword == "property") {
            if (!in_vertex_element)
                raise(ErrorKind::UnsupportedFormat, "property outside the vertex element");
            std::string type, name;
            iss >> type;
            if (type == "list")
                raise(ErrorKind::UnsupportedFormat, "list properties are not supported");
            iss >> name;
            if (scalar_size(type) == 0)
                raise(ErrorKind::UnsupportedFormat, "unknown property type \"" + type + "\"");
            out.header.properties.push_back({name, type});
        } else if (keyword == "end_header") {
            done = true;
            break;
        } else {
            raise(ErrorKind::UnsupportedFormat, "unexpected header keyword \"" + keyword + "\"");
        }
    }
    if (!done) raise(ErrorKind::UnsupportedFormat, "header is missing end_header");
    if (!saw_format) raise(ErrorKind::UnsupportedFormat, "header is missing a format line");
    if (!saw_vertex_element) raise(ErrorKind::UnsupportedFormat, "header has no vertex element");

    std::size_t stride = 0;
    out.offsets.reserve(out.header.properties.size());
    for (const PlyProperty& p : out.header.properties) {
        out.offsets.push_back(stride);
        stride += scalar_size(p.type);
    }
    out.header.vertex_stride = stride;
    out.header.header_bytes = pos;

    // f_rest_* must form the index set 0..K-1 with K mapping to an SH degree
    std::int64_t rest_count = 0;
    std::vector<bool> seen;
    for (const PlyProperty& p : out.header.properties) {
        if (p.name.rfind("f_rest_", 0) != 0) continue;
        std::int64_t idx = -1;
        try {
            idx = std::stoll(p.name.substr(7));
        } catch (...) {
            raise(ErrorKind::UnsupportedFormat, "malformed property name \"" + p.name + "\"");
        }
        if (idx < 0) raise(ErrorKind::UnsupportedFormat, "negative f_rest index");
        if (static_cast<std::size_t>(idx) >= seen.size()) seen.resize(static_cast<std::size_t>(idx) + 1, false);
        if (seen[static_cast<std::size_t>(idx)])
            raise(ErrorKind::UnsupportedFormat, "duplicate property \"" + p.name + "\"");
        seen[static_cast<std::size_t>(idx)] = true;
        ++rest_count;
    }
    if (static_cast<std::size_t>(rest_count) != seen.size()) {
        for (std::size_t i = 0; i < seen.size(); ++i)
            if (!seen[i])
                raise(ErrorKind::MissingProperty, "f_rest_" + std::to_string(i) +
                                                      " (run must cover 0.." + std::to_string(seen.size() - 1) + ")");
    }
    if (rest_count % 3 != 0)
        raise(ErrorKind::UnsupportedFormat,
              "f_rest count " + std::to_string(rest_count) + " is not a multiple of 3");
    double l = std::sqrt(static_cast<double>(rest_count) / 3.0 + 1.0) - 1.0;
    int degree = static_cast<int>(std::lround(l));
    if (sh_rest_width(degree) != rest_count)
        raise(ErrorKind::UnsupportedFormat,
              "f_rest count " + std::to_string(rest_count) + " does not match any SH degree");
    out.header.sh_degree = degree;
    return out;
}

int find_property(const ParsedHeader& h, const std::string& name, bool required) {
    for (std::size_t i = 0; i < h.header.properties.size(); ++i) {
        if (h.header.properties[i].name == name) {
            if (!is_float32(h.header.properties[i].type))
                raise(ErrorKind::UnsupportedFormat,
                      "property \"" + name + "\" must be float, got " + h.header.properties[i].type);
            return static_cast<int>(i);
        }
    }
    if (required) raise(ErrorKind::MissingProperty, "\"" + name + "\"");
    return -1;
}

} // namespace

PlyHeader sniff(std::span<const std::uint8_t> bytes) {
    ParsedHeader h = parse_header(bytes);
    // presence check only; the body is untouched
    for (const char* name : {"x", "y", "z", "opacity"}) find_property(h, name, true);
    for (int k = 0; k < 3; ++k) {
        find_property(h, "f_dc_" + std::to_string(k), true);
        find_property(h, "scale_" + std::to_string(k), true);
    }
    for (int k = 0; k < 4; ++k) find_property(h, "rot_" + std::to_string(k), true);
    return h.header;
}

RawScene parse_ply(std::span<const std::uint8_t> bytes) {
    ParsedHeader h = parse_header(bytes);
    const std::int64_t n = h.header.vertex_count;
    const int rest = static_cast<int>(sh_rest_width(h.header.sh_degree));

    const std::size_t expected = static_cast<std::size_t>(n) * h.header.vertex_stride;
    const std::size_t actual = bytes.size() - h.header.header_bytes;
    if (actual < expected)
        raise(ErrorKind::TruncatedBody,
              "expected " + std::to_string(expected) + " body bytes, got " + std::to_string(actual));

    std::vector<int> cols; // property index per canonical slot
    cols.push_back(find_property(h, "x", true));
    cols.push_back(find_property(h, "y", true));
    cols.push_back(find_property(h, "z", true));
    int nx = find_property(h, "nx", false);
    int ny = find_property(h, "ny", false);
    int nz = find_property(h, "nz", false);
    std::vector<int> dc, fr, sc, rot;
    for (int k = 0; k < 3; ++k) dc.push_back(find_property(h, "f_dc_" + std::to_string(k), true));
    for (int k = 0; k < rest; ++k) fr.push_back(find_property(h, "f_rest_" + std::to_string(k), true));
    int op = find_property(h, "opacity", true);
    for (int k = 0; k < 3; ++k) sc.push_back(find_property(h, "scale_" + std::to_string(k), true));
    for (int k = 0; k < 4; ++k) rot.push_back(find_property(h, "rot_" + std::to_string(k), true));

    std::vector<bool> known(h.header.properties.size(), false);
    auto mark = [&](int idx) { if (idx >= 0) known[static_cast<std::size_t>(idx)] = true; };
    for (int c : cols) mark(c);
    mark(nx); mark(ny); mark(nz);
    for (int c : dc) mark(c);
    for (int c : fr) mark(c);
    mark(op);
    for (int c : sc) mark(c);
    for (int c : rot) mark(c);

    RawScene raw;
    raw.count = n;
    raw.sh_degree = h.header.sh_degree;
    raw.position.resize(static_cast<std::size_t>(n) * 3);
    raw.normal.assign(static_cast<std::size_t>(n) * 3, 0.0f);
    raw.f_dc.resize(static_cast<std::size_t>(n) * 3);
    raw.f_rest.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(rest));
    raw.opacity_logit.resize(static_cast<std::size_t>(n));
    raw.log_scale.resize(static_cast<std::size_t>(n) * 3);
    raw.quat.resize(static_cast<std::size_t>(n) * 4);

    for (std::size_t p = 0; p < h.header.properties.size(); ++p) {
        if (known[p]) continue;
        ExtraProperty extra;
        extra.name = h.header.properties[p].name;
        extra.type = h.header.properties[p].type;
        extra.value_size = scalar_size(extra.type);
        extra.data.resize(static_cast<std::size_t>(n) * extra.value_size);
        raw.extras.push_back(std::move(extra));
    }

    const std::uint8_t* body = bytes.data() + h.header.header_bytes;
    auto read_f = [&](const std::uint8_t* rec, int prop) {
        float v;
        std::memcpy(&v, rec + h.offsets[static_cast<std::size_t>(prop)], 4);
        return v;
    };

    for (std::int64_t i = 0; i < n; ++i) {
        const std::uint8_t* rec = body + static_cast<std::size_t>(i) * h.header.vertex_stride;
        for (int k = 0; k < 3; ++k) raw.position[i * 3 + k] = read_f(rec, cols[static_cast<std::size_t>(k)]);
        if (nx >= 0) raw.normal[i * 3 + 0] = read_f(rec, nx);
        if (ny >= 0) raw.normal[i * 3 + 1] = read_f(rec, ny);
        if (nz >= 0) raw.normal[i * 3 + 2] = read_f(rec, nz);
        for (int k = 0; k < 3; ++k) raw.f_dc[i * 3 + k] = read_f(rec, dc[static_cast<std::size_t>(k)]);
        for (int k = 0; k < rest; ++k) raw.f_rest[i * rest + k] = read_f(rec, fr[static_cast<std::size_t>(k)]);
        raw.opacity_logit[i] = read_f(rec, op);
        for (int k = 0; k < 3; ++k) raw.log_scale[i * 3 + k] = read_f(rec, sc[static_cast<std::size_t>(k)]);
        for (int k = 0; k < 4; ++k) raw.quat[i * 4 + k] = read_f(rec, rot[static_cast<std::size_t>(k)]);
        std::size_t e = 0;
        for (std::size_t p = 0; p < h.header.properties.size(); ++p) {
            if (known[p]) continue;
            ExtraProperty& extra = raw.extras[e++];
            std::memcpy(extra.data.data() + static_cast<std::size_t>(i) * extra.value_size,
                        rec + h.offsets[p], extra.value_size);
        }
    }

    validate_raw(raw);
    return raw;
}

std::vector<std::uint8_t> write_ply(const RawScene& raw) {
    validate_raw(raw);
    const std::int64_t n = raw.count;
    const int rest = sh_rest_width(raw.sh_degree);

    std::string header;
    header += "ply\n";
    header += "format binary_little_endian 1.0\n";
    header += "element vertex " + std::to_string(n) + "\n";
    auto prop = [&](const std::string& type, const std::string& name) {
        header += "property " + type + " " + name + "\n";
    };
    for (const char* name : {"x", "y", "z", "nx", "ny", "nz"}) prop("float", name);
    for (int k = 0; k < 3; ++k) prop("float", "f_dc_" + std::to_string(k));
    for (int k = 0; k < rest; ++k) prop("float", "f_rest_" + std::to_string(k));
    prop("float", "opacity");
    for (int k = 0; k < 3; ++k) prop("float", "scale_" + std::to_string(k));
    for (int k = 0; k < 4; ++k) prop("float", "rot_" + std::to_string(k));
    for (const ExtraProperty& e : raw.extras) {
        if (e.data.size() != static_cast<std::size_t>(n) * e.value_size)
            raise(ErrorKind::ShapeMismatch, "extra property \"" + e.name + "\" has wrong size");
        prop(e.type, e.name);
    }
    header += "end_header\n";

    std::size_t extra_stride = 0;
    for (const ExtraProperty& e : raw.extras) extra_stride += e.value_size;
    const std::size_t stride = static_cast<std::size_t>(17 + rest) * 4 + extra_stride;

    std::vector<std::uint8_t> out(header.size() + static_cast<std::size_t>(n) * stride);
    std::memcpy(out.data(), header.data(), header.size());

    std::uint8_t* body = out.data() + header.size();
    for (std::int64_t i = 0; i < n; ++i) {
        std::uint8_t* rec = body + static_cast<std::size_t>(i) * stride;
        auto put = [&](float v) {
            std::memcpy(rec, &v, 4);
            rec += 4;
        };
        for (int k = 0; k < 3; ++k) put(raw.position[i * 3 + k]);
        for (int k = 0; k < 3; ++k) put(raw.normal[i * 3 + k]);
        for (int k = 0; k < 3; ++k) put(raw.f_dc[i * 3 + k]);
        for (int k = 0; k < rest; ++k) put(raw.f_rest[i * rest + k]);
        put(raw.opacity_logit[i]);
        for (int k = 0; k < 3; ++k) put(raw.log_scale[i * 3 + k]);
        for (int k = 0; k < 4; ++k) put(raw.quat[i * 4 + k]);
        for (const ExtraProperty& e : raw.extras) {
            std::memcpy(rec, e.data.data() + static_cast<std::size_t>(i) * e.value_size, e.value_size);
            rec += e.value_size;
        }
    }
    return out;
}

RawScene load_ply_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::IoError, "cannot open \"" + path + "\"");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return parse_ply(bytes);
}

void save_ply_file(const RawScene& raw, const std::string& path) {
    std::vector<std::uint8_t> bytes = write_ply(raw);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorKind::IoError, "cannot open \"" + path + "\" for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) raise(ErrorKind::IoError, "short write to \"" + path + "\"");
}

} // namespace f3dgs
