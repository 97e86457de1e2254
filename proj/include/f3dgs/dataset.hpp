// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "f3dgs/scene.hpp"

namespace f3dgs {

enum class Label { real, fake };
enum class Editor { none, gaussctrl, igs2gs, synthetic };
enum class EditFamily { none, material_type, background_surface, color };

const char* label_name(Label l);
const char* editor_name(Editor e);
const char* edit_family_name(EditFamily f);
Label parse_label(const std::string& s);
Editor parse_editor(const std::string& s);
EditFamily parse_edit_family(const std::string& s);

/// One catalog entry. Real records carry editor none / family none; fake
/// records must name their editor, family and edited caption.
struct SceneRecord {
    std::string id;
    std::string category;
    Label label = Label::real;
    Editor editor = Editor::none;
    EditFamily edit_family = EditFamily::none;
    std::string caption;
    std::optional<std::string> edited_caption;
    std::string asset_path;

    bool operator==(const SceneRecord&) const = default;
};

struct Manifest {
    std::vector<SceneRecord> records;
    std::uint64_t seed = 0;

    bool operator==(const Manifest&) const = default;
};

void validate_record(const SceneRecord& rec);

/// Category balancing: n = the minimum per-category count; exactly n records
/// sampled uniformly without replacement per category (seeded). Output is
/// ordered by category name, then sampling order.
std::vector<SceneRecord> balance_categories(std::span<const SceneRecord> records,
                                            std::uint64_t rng_seed);

/// Caption-editing prompt for templates 1..3, assembled as
/// template + '\n' + caption + '\n' + suffix. Template and suffix strings are
/// byte-exact constants.
std::string build_edit_prompt(const std::string& caption, int template_id);

/// The template text alone (1..3) and the fixed suffix.
const std::string& edit_prompt_template(int template_id);
const std::string& edit_prompt_suffix();

/// Family matching each prompt template (1 material, 2 background, 3 color).
EditFamily template_edit_family(int template_id);

/// Seeded stratified assignment of the three edit families; family counts
/// differ by at most one.
std::map<std::string, EditFamily> assign_edit_types(std::span<const std::string> scene_ids,
                                                    std::uint64_t rng_seed);

/// Independent uniform draw per scene instead of the balanced assignment.
std::map<std::string, EditFamily> sample_edit_types(std::span<const std::string> scene_ids,
                                                    std::uint64_t rng_seed);

/// Deterministic stand-in for diffusion-based scene editing. The central
/// region is the set of Gaussians within half the max bbox extent of the
/// centroid; color edits rotate/scale sh0 inside it, material edits perturb
/// sh_rest and log-scales inside it, background edits shift sh0 and opacity
/// outside it. Geometry count is never changed.
GaussianScene synth_edit(const GaussianScene& scene, EditFamily family, double magnitude,
                         std::uint64_t rng_seed);

void write_manifest(const Manifest& manifest, const std::string& path);
Manifest read_manifest(const std::string& path);

std::string manifest_to_jsonl(const Manifest& manifest);
Manifest manifest_from_jsonl(const std::string& text);

} // namespace f3dgs
