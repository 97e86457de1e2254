// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#include "f3dgs/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "f3dgs/rng.hpp"

namespace f3dgs {

using nlohmann::json;

const char* label_name(Label l) { return l == Label::real ? "real" : "fake"; }

const char* editor_name(Editor e) {
    switch (e) {
    case Editor::none: return "none";
    case Editor::gaussctrl: return "gaussctrl";
    case Editor::igs2gs: return "igs2gs";
    case Editor::synthetic: return "synthetic";
    }
    return "?";
}

const char* edit_family_name(EditFamily f) {
    switch (f) {
    case EditFamily::none: return "none";
    case EditFamily::material_type: return "material_type";
    case EditFamily::background_surface: return "background_surface";
    case EditFamily::color: return "color";
    }
    return "?";
}

Label parse_label(const std::string& s) {
    if (s == "real") return Label::real;
    if (s == "fake") return Label::fake;
    raise(ErrorKind::ParseError, "unknown label \"" + s + "\"");
}

Editor parse_editor(const std::string& s) {
    if (s == "none") return Editor::none;
    if (s == "gaussctrl") return Editor::gaussctrl;
    if (s == "igs2gs") return Editor::igs2gs;
    if (s == "synthetic") return Editor::synthetic;
    raise(ErrorKind::ParseError, "unknown editor \"" + s + "\"");
}

EditFamily parse_edit_family(const std::string& s) {
    if (s == "none") return EditFamily::none;
    if (s == "material_type") return EditFamily::material_type;
    if (s == "background_surface") return EditFamily::background_surface;
    if (s == "color") return EditFamily::color;
    raise(ErrorKind::ParseError, "unknown edit family \"" + s + "\"");
}

void validate_record(const SceneRecord& rec) {
    if (rec.id.empty()) raise(ErrorKind::ParseError, "record has an empty id");
    bool is_real = rec.label == Label::real;
    if (is_real != (rec.editor == Editor::none) || is_real != (rec.edit_family == EditFamily::none))
        raise(ErrorKind::ParseError,
              "record \"" + rec.id + "\": label/editor/edit_family combination is inconsistent");
    if (!is_real && (!rec.edited_caption || rec.edited_caption->empty()))
        raise(ErrorKind::ParseError, "fake record \"" + rec.id + "\" is missing an edited caption");
}

std::vector<SceneRecord> balance_categories(std::span<const SceneRecord> records,
                                            std::uint64_t rng_seed) {
    if (records.empty()) raise(ErrorKind::EmptyInput, "no records to balance");

    std::map<std::string, std::vector<std::size_t>> by_category;
    for (std::size_t i = 0; i < records.size(); ++i)
        by_category[records[i].category].push_back(i);

    std::size_t n = records.size();
    for (const auto& [cat, idx] : by_category) n = std::min(n, idx.size());

    std::vector<SceneRecord> out;
    out.reserve(n * by_category.size());
    for (auto& [cat, idx] : by_category) {
        // partial Fisher-Yates: the first n slots are the uniform sample
        Rng rng(rng_seed ^ fnv1a64(cat));
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t j = i + static_cast<std::size_t>(rng.next_below(idx.size() - i));
            std::swap(idx[i], idx[j]);
            out.push_back(records[idx[i]]);
        }
    }
    return out;
}

namespace {

const std::string kPrompt1 =
    "Modify the following sentence by changing the material or the type of the main object, "
    "but do not change the color, the background, or the shape.";
const std::string kPrompt2 =
    "Modify the following sentence by changing the background or surface on which the main "
    "object stands, but do not change the color, the shape, or any attribute of the main object.";
const std::string kPrompt3 =
    "Modify the following sentence by changing the color of the main object, but do not change "
    "the shape or any other attribute of the main object.";
const std::string kSuffix =
    "The output should be a single caption without any additional explanation or text.";

} // namespace

const std::string& edit_prompt_template(int template_id) {
    switch (template_id) {
    case 1: return kPrompt1;
    case 2: return kPrompt2;
    case 3: return kPrompt3;
    default:
        raise(ErrorKind::OutOfRange, "prompt template must be 1, 2 or 3, got " + std::to_string(template_id));
    }
}

const std::string& edit_prompt_suffix() { return kSuffix; }

EditFamily template_edit_family(int template_id) {
    switch (template_id) {
    case 1: return EditFamily::material_type;
    case 2: return EditFamily::background_surface;
    case 3: return EditFamily::color;
    default:
        raise(ErrorKind::OutOfRange, "prompt template must be 1, 2 or 3, got " + std::to_string(template_id));
    }
}

std::string build_edit_prompt(const std::string& caption, int template_id) {
    if (caption.empty()) raise(ErrorKind::EmptyCaption, "caption must be non-empty");
    return edit_prompt_template(template_id) + "\n" + caption + "\n" + kSuffix;
}

std::map<std::string, EditFamily> assign_edit_types(std::span<const std::string> scene_ids,
                                                    std::uint64_t rng_seed) {
    if (scene_ids.empty()) raise(ErrorKind::EmptyInput, "no scene ids to assign");

    const std::array<EditFamily, 3> families = {EditFamily::material_type,
                                                EditFamily::background_surface, EditFamily::color};
    const std::size_t n = scene_ids.size();
    Rng rng(rng_seed);

    // balanced multiset of families: n/3 of each plus a seeded pick of extras
    std::vector<EditFamily> pool;
    pool.reserve(n);
    for (EditFamily f : families)
        for (std::size_t i = 0; i < n / 3; ++i) pool.push_back(f);
    std::array<EditFamily, 3> extras = families;
    shuffle(extras, rng);
    for (std::size_t i = 0; i < n % 3; ++i) pool.push_back(extras[i]);
    shuffle(pool, rng);

    std::vector<std::string> ids(scene_ids.begin(), scene_ids.end());
    std::sort(ids.begin(), ids.end());
    std::map<std::string, EditFamily> out;
    for (std::size_t i = 0; i < n; ++i) out[ids[i]] = pool[i];
    return out;
}

std::map<std::string, EditFamily> sample_edit_types(std::span<const std::string> scene_ids,
                                                    std::uint64_t rng_seed) {
    if (scene_ids.empty()) raise(ErrorKind::EmptyInput, "no scene ids to assign");
    const std::array<EditFamily, 3> families = {EditFamily::material_type,
                                                EditFamily::background_surface, EditFamily::color};
    std::vector<std::string> ids(scene_ids.begin(), scene_ids.end());
    std::sort(ids.begin(), ids.end());
    Rng rng(rng_seed);
    std::map<std::string, EditFamily> out;
    for (const std::string& id : ids) out[id] = families[rng.next_below(3)];
    return out;
}

namespace {

// rotation of v around the unit axis (1,1,1)/sqrt(3) by angle theta
std::array<double, 3> rotate_rgb(const std::array<double, 3>& v, double theta) {
    const double s = std::sin(theta), c = std::cos(theta);
    const double inv3 = 1.0 / 3.0;
    const double k = 1.0 / std::numbers::sqrt3;
    double dot = (v[0] + v[1] + v[2]) * inv3;
    std::array<double, 3> cross = {k * (v[2] - v[1]), k * (v[0] - v[2]), k * (v[1] - v[0])};
    std::array<double, 3> out;
    for (int i = 0; i < 3; ++i) out[i] = v[i] * c + cross[i] * s + dot * (1.0 - c) * 3.0 * k * k;
    return out;
}

} // namespace

GaussianScene synth_edit(const GaussianScene& scene, EditFamily family, double magnitude,
                         std::uint64_t rng_seed) {
    validate_scene(scene);
    if (!(magnitude > 0.0 && magnitude <= 1.0))
        raise(ErrorKind::BadMagnitude, "magnitude must lie in (0,1], got " + std::to_string(magnitude));
    if (family == EditFamily::none)
        raise(ErrorKind::OutOfRange, "edit family must name one of the three manipulations");

    const std::int64_t n = scene.count;
    std::array<double, 3> centroid = {0, 0, 0};
    std::array<double, 3> lo = {scene.position[0], scene.position[1], scene.position[2]};
    std::array<double, 3> hi = lo;
    for (std::int64_t i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) {
            double p = scene.position[i * 3 + k];
            centroid[k] += p;
            lo[k] = std::min(lo[k], p);
            hi[k] = std::max(hi[k], p);
        }
    for (int k = 0; k < 3; ++k) centroid[k] /= static_cast<double>(n);
    double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
    double radius = 0.5 * (extent > 0.0 ? extent : 1.0);

    auto inside = [&](std::int64_t i) {
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) {
            double d = scene.position[i * 3 + k] - centroid[k];
            d2 += d * d;
        }
        return d2 <= radius * radius;
    };

    GaussianScene out = scene;
    Rng rng(rng_seed);

    switch (family) {
    case EditFamily::color: {
        double theta = magnitude * (std::numbers::pi / 3.0) * (0.5 + rng.next_double());
        double gain = 1.0 + magnitude;
        for (std::int64_t i = 0; i < n; ++i) {
            if (!inside(i)) continue;
            std::array<double, 3> v = {scene.sh0[i * 3], scene.sh0[i * 3 + 1], scene.sh0[i * 3 + 2]};
            std::array<double, 3> r = rotate_rgb(v, theta);
            for (int k = 0; k < 3; ++k) out.sh0[i * 3 + k] = r[k] * gain;
        }
        break;
    }
    case EditFamily::material_type: {
        const int rest = sh_rest_width(scene.sh_degree);
        for (std::int64_t i = 0; i < n; ++i) {
            if (!inside(i)) continue;
            for (int k = 0; k < rest; ++k)
                out.sh_rest[i * rest + k] = scene.sh_rest[i * rest + k] + magnitude * rng.normal();
            for (int k = 0; k < 3; ++k) {
                double log_s = std::log(scene.scale[i * 3 + k]) + magnitude * rng.normal();
                out.scale[i * 3 + k] = std::exp(log_s);
            }
        }
        break;
    }
    case EditFamily::background_surface: {
        std::array<double, 3> tint = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                                      rng.uniform(-1.0, 1.0)};
        for (std::int64_t i = 0; i < n; ++i) {
            if (inside(i)) continue;
            for (int k = 0; k < 3; ++k) out.sh0[i * 3 + k] = scene.sh0[i * 3 + k] + magnitude * tint[k];
            out.opacity[i] = std::clamp(scene.opacity[i] + magnitude * 0.3, 0.0, 1.0);
        }
        break;
    }
    case EditFamily::none:
        break;
    }

    validate_scene(out);
    return out;
}

namespace {

json record_to_json(const SceneRecord& rec) {
    json j;
    j["id"] = rec.id;
    j["category"] = rec.category;
    j["label"] = label_name(rec.label);
    j["editor"] = editor_name(rec.editor);
    j["edit_family"] = edit_family_name(rec.edit_family);
    j["caption"] = rec.caption;
    if (rec.edited_caption) j["edited_caption"] = *rec.edited_caption;
    j["asset_path"] = rec.asset_path;
    return j;
}

SceneRecord record_from_json(const json& j) {
    SceneRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.category = j.value("category", "");
    rec.label = parse_label(j.at("label").get<std::string>());
    rec.editor = parse_editor(j.value("editor", "none"));
    rec.edit_family = parse_edit_family(j.value("edit_family", "none"));
    rec.caption = j.value("caption", "");
    if (j.contains("edited_caption")) rec.edited_caption = j.at("edited_caption").get<std::string>();
    rec.asset_path = j.value("asset_path", "");
    return rec;
}

} // namespace

std::string manifest_to_jsonl(const Manifest& manifest) {
    std::string out;
    if (manifest.seed != 0) {
        json head;
        head["_manifest"] = 1;
        head["seed"] = manifest.seed;
        out += head.dump() + "\n";
    }
    for (const SceneRecord& rec : manifest.records) out += record_to_json(rec).dump() + "\n";
    return out;
}

Manifest manifest_from_jsonl(const std::string& text) {
    Manifest m;
    std::set<std::string> ids;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            raise(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
        }
        if (j.contains("_manifest")) {
            m.seed = j.value("seed", std::uint64_t{0});
            continue;
        }
        SceneRecord rec;
        try {
            rec = record_from_json(j);
        } catch (const json::exception& e) {
            raise(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!ids.insert(rec.id).second)
            raise(ErrorKind::DuplicateId,
                  "record id \"" + rec.id + "\" repeats at line " + std::to_string(line_no));
        m.records.push_back(std::move(rec));
    }
    return m;
}

void write_manifest(const Manifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorKind::IoError, "cannot open \"" + path + "\" for writing");
    std::string text = manifest_to_jsonl(manifest);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) raise(ErrorKind::IoError, "short write to \"" + path + "\"");
}

Manifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::IoError, "cannot open \"" + path + "\"");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return manifest_from_jsonl(text);
}

} // namespace f3dgs
