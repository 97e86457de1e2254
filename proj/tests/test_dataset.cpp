// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <map>

#include "f3dgs/dataset.hpp"
#include "support/test_util.hpp"

using namespace f3dgs;
using namespace f3dgs::testutil;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("dataset");

namespace {

SceneRecord real_record(const std::string& id, const std::string& category) {
    SceneRecord rec;
    rec.id = id;
    rec.category = category;
    rec.caption = "a " + category;
    rec.asset_path = id + ".ply";
    return rec;
}

std::vector<SceneRecord> category_records(const std::map<std::string, int>& counts) {
    std::vector<SceneRecord> records;
    for (const auto& [cat, n] : counts)
        for (int i = 0; i < n; ++i) records.push_back(real_record(cat + std::to_string(i), cat));
    return records;
}

} // namespace

TEST_CASE("balance keeps the minimum count per category") {
    auto records = category_records({{"A", 5}, {"B", 3}, {"C", 7}});
    auto selected = balance_categories(records, 1);
    CHECK(selected.size() == 9);
    std::map<std::string, int> per_cat;
    for (const SceneRecord& rec : selected) per_cat[rec.category]++;
    CHECK(per_cat["A"] == 3);
    CHECK(per_cat["B"] == 3);
    CHECK(per_cat["C"] == 3);

    SUBCASE("all-singleton categories select everything") {
        auto singles = category_records({{"A", 1}, {"B", 1}});
        auto sel = balance_categories(singles, 3);
        CHECK(sel.size() == 2);
    }
    SUBCASE("determinism per seed") {
        auto a = balance_categories(category_records({{"A", 4}, {"B", 4}}), 7);
        auto b = balance_categories(category_records({{"A", 4}, {"B", 4}}), 7);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].id == b[i].id);
    }
    SUBCASE("empty input") {
        std::vector<SceneRecord> none;
        CHECK_THROWS_AS(balance_categories(none, 0), Error);
    }
}

TEST_CASE("edit prompts are byte-exact") {
    // golden strings frozen here, independent of the library constants
    const std::string golden1 =
        "Modify the following sentence by changing the material or the type of the main object, "
        "but do not change the color, the background, or the shape.";
    const std::string golden2 =
        "Modify the following sentence by changing the background or surface on which the main "
        "object stands, but do not change the color, the shape, or any attribute of the main "
        "object.";
    const std::string golden3 =
        "Modify the following sentence by changing the color of the main object, but do not "
        "change the shape or any other attribute of the main object.";
    const std::string golden_suffix =
        "The output should be a single caption without any additional explanation or text.";

    CHECK(edit_prompt_template(1) == golden1);
    CHECK(edit_prompt_template(2) == golden2);
    CHECK(edit_prompt_template(3) == golden3);
    CHECK(edit_prompt_suffix() == golden_suffix);

    std::string prompt = build_edit_prompt("a sheep on grass", 1);
    CHECK(prompt == golden1 + "\na sheep on grass\n" + golden_suffix);
    CHECK(prompt.rfind("Modify the following sentence by changing the material or the type of "
                       "the main object",
                       0) == 0);
    CHECK(build_edit_prompt("x", 3).find("changing the color of the main object") !=
          std::string::npos);
    CHECK(build_edit_prompt("same", 2) == build_edit_prompt("same", 2));

    CHECK_THROWS_AS(build_edit_prompt("", 1), Error);
    CHECK_THROWS_AS(build_edit_prompt("x", 4), Error);

    CHECK(template_edit_family(1) == EditFamily::material_type);
    CHECK(template_edit_family(2) == EditFamily::background_surface);
    CHECK(template_edit_family(3) == EditFamily::color);
}

TEST_CASE("edit-type assignment is balanced and seeded") {
    auto ids_of = [](int n) {
        std::vector<std::string> ids;
        for (int i = 0; i < n; ++i) ids.push_back("scene" + std::to_string(i));
        return ids;
    };

    SUBCASE("nine ids split 3/3/3") {
        auto ids = ids_of(9);
        auto assignment = assign_edit_types(ids, 3);
        std::map<EditFamily, int> counts;
        for (const auto& [id, fam] : assignment) counts[fam]++;
        CHECK(counts[EditFamily::material_type] == 3);
        CHECK(counts[EditFamily::background_surface] == 3);
        CHECK(counts[EditFamily::color] == 3);
    }
    SUBCASE("ten ids differ by at most one") {
        auto ids = ids_of(10);
        auto assignment = assign_edit_types(ids, 3);
        std::map<EditFamily, int> counts;
        for (const auto& [id, fam] : assignment) counts[fam]++;
        int lo = 10, hi = 0;
        for (const auto& [fam, c] : counts) {
            lo = std::min(lo, c);
            hi = std::max(hi, c);
        }
        CHECK(counts.size() == 3);
        CHECK(hi - lo <= 1);
        CHECK(lo + hi + (10 - lo - hi) == 10);
    }
    SUBCASE("family counts differ by at most one for any input size") {
        for (int n = 1; n <= 24; ++n) {
            auto assignment = assign_edit_types(ids_of(n), static_cast<std::uint64_t>(n) * 3 + 1);
            std::map<EditFamily, int> counts;
            for (const auto& [id, fam] : assignment) counts[fam]++;
            int lo = n, hi = 0;
            for (EditFamily f :
                 {EditFamily::material_type, EditFamily::background_surface, EditFamily::color}) {
                int c = counts.count(f) ? counts[f] : 0;
                lo = std::min(lo, c);
                hi = std::max(hi, c);
            }
            CHECK(hi - lo <= 1);
        }
    }
    SUBCASE("seed 13 reproduces exactly; other seeds may differ") {
        auto ids = ids_of(30);
        auto a = assign_edit_types(ids, 13);
        auto b = assign_edit_types(ids, 13);
        CHECK(a == b);
        bool any_diff = false;
        for (std::uint64_t seed = 14; seed < 20 && !any_diff; ++seed)
            any_diff = assign_edit_types(ids, seed) != a;
        CHECK(any_diff);
    }
    SUBCASE("uniform sampling covers every id deterministically") {
        auto ids = ids_of(40);
        auto a = sample_edit_types(ids, 9);
        CHECK(a.size() == 40);
        CHECK(a == sample_edit_types(ids, 9));
        for (const auto& [id, fam] : a) CHECK(fam != EditFamily::none);
    }
}

TEST_CASE("synth_edit contracts") {
    GaussianScene scene = make_random_scene(120, 3, 71);

    SUBCASE("magnitude near zero approaches the identity") {
        for (EditFamily family :
             {EditFamily::color, EditFamily::material_type, EditFamily::background_surface}) {
            GaussianScene out = synth_edit(scene, family, 1e-9, 5);
            for (std::size_t i = 0; i < scene.sh0.size(); ++i)
                CHECK(std::abs(out.sh0[i] - scene.sh0[i]) < 1e-6);
            for (std::size_t i = 0; i < scene.opacity.size(); ++i)
                CHECK(std::abs(out.opacity[i] - scene.opacity[i]) < 1e-6);
            for (std::size_t i = 0; i < scene.scale.size(); ++i)
                CHECK(std::abs(out.scale[i] - scene.scale[i]) / scene.scale[i] < 1e-6);
        }
    }
    SUBCASE("color edits only touch sh0") {
        GaussianScene out = synth_edit(scene, EditFamily::color, 0.5, 7);
        CHECK(out.opacity == scene.opacity);
        CHECK(out.scale == scene.scale);
        CHECK(out.quat_unit == scene.quat_unit);
        CHECK(out.sh_rest == scene.sh_rest);
        CHECK(out.position == scene.position);
        CHECK(out.sh0 != scene.sh0);
    }
    SUBCASE("seeded determinism and diversity") {
        GaussianScene a = synth_edit(scene, EditFamily::color, 0.5, 11);
        GaussianScene b = synth_edit(scene, EditFamily::color, 0.5, 11);
        GaussianScene c = synth_edit(scene, EditFamily::color, 0.5, 12);
        CHECK(a.sh0 == b.sh0);
        CHECK(a.sh0 != c.sh0);
    }
    SUBCASE("geometry count and invariants are preserved") {
        for (EditFamily family :
             {EditFamily::color, EditFamily::material_type, EditFamily::background_surface}) {
            GaussianScene out = synth_edit(scene, family, 1.0, 3);
            CHECK(out.count == scene.count);
            CHECK(out.sh_degree == scene.sh_degree);
            validate_scene(out);
        }
    }
    SUBCASE("bad magnitudes") {
        CHECK_THROWS_AS(synth_edit(scene, EditFamily::color, 0.0, 1), Error);
        CHECK_THROWS_AS(synth_edit(scene, EditFamily::color, 1.5, 1), Error);
        try {
            synth_edit(scene, EditFamily::color, -1.0, 1);
            FAIL("expected BadMagnitude");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::BadMagnitude);
        }
    }
}

TEST_CASE("manifest io") {
    fs::path path = fs::temp_directory_path() / "f3dgs_manifest_test.jsonl";

    SUBCASE("empty manifest round trips through an empty file") {
        Manifest empty;
        write_manifest(empty, path.string());
        CHECK(fs::file_size(path) == 0);
        Manifest back = read_manifest(path.string());
        CHECK(back == empty);
    }

    SUBCASE("records round trip fieldwise") {
        Manifest m;
        m.seed = 7;
        m.records.push_back(real_record("r1", "sheep"));
        SceneRecord fake;
        fake.id = "f1";
        fake.category = "sheep";
        fake.label = Label::fake;
        fake.editor = Editor::gaussctrl;
        fake.edit_family = EditFamily::color;
        fake.caption = "a sheep on grass";
        fake.edited_caption = "a blue sheep on grass";
        fake.asset_path = "f1.ply";
        m.records.push_back(fake);

        write_manifest(m, path.string());
        Manifest back = read_manifest(path.string());
        CHECK(back == m);
    }

    SUBCASE("duplicate ids name the id and line") {
        std::string text = manifest_to_jsonl(Manifest{{real_record("dup", "a")}, 0});
        text += manifest_to_jsonl(Manifest{{real_record("dup", "b")}, 0});
        try {
            manifest_from_jsonl(text);
            FAIL("expected DuplicateId");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::DuplicateId);
            CHECK(std::string(e.what()).find("dup") != std::string::npos);
            CHECK(std::string(e.what()).find("2") != std::string::npos);
        }
    }

    SUBCASE("parse errors carry the line number") {
        std::string text = manifest_to_jsonl(Manifest{{real_record("ok", "a")}, 0});
        text += "{not json\n";
        try {
            manifest_from_jsonl(text);
            FAIL("expected ParseError");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::ParseError);
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }

    fs::remove(path);
}

TEST_CASE("record invariants") {
    SceneRecord bad = real_record("x", "cat");
    bad.label = Label::fake; // fake with editor none
    CHECK_THROWS_AS(validate_record(bad), Error);

    SceneRecord fake;
    fake.id = "y";
    fake.label = Label::fake;
    fake.editor = Editor::igs2gs;
    fake.edit_family = EditFamily::color;
    CHECK_THROWS_AS(validate_record(fake), Error); // missing edited caption
    fake.edited_caption = "edited";
    CHECK_NOTHROW(validate_record(fake));
}

TEST_SUITE_END();
