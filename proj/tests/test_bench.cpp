// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <map>
#include <set>

#include "f3dgs/bench.hpp"
#include "support/test_util.hpp"

using namespace f3dgs;
using namespace f3dgs::testutil;

TEST_SUITE_BEGIN("bench");

namespace {

SceneRecord record_of(const std::string& id, Label label, Editor editor) {
    SceneRecord rec;
    rec.id = id;
    rec.category = "cat";
    rec.label = label;
    rec.editor = editor;
    rec.edit_family = label == Label::fake ? EditFamily::color : EditFamily::none;
    rec.caption = "caption";
    if (label == Label::fake) rec.edited_caption = "edited";
    rec.asset_path = id + ".ply";
    return rec;
}

Manifest mixed_manifest(int n) {
    Manifest m;
    for (int i = 0; i < n; ++i) {
        bool fake = i % 2 == 1;
        Editor editor = fake ? (i % 4 == 1 ? Editor::gaussctrl : Editor::igs2gs) : Editor::none;
        m.records.push_back(record_of("r" + std::to_string(i), fake ? Label::fake : Label::real, editor));
    }
    return m;
}

} // namespace

TEST_CASE("mixed split follows 80-20 and stays deterministic") {
    Manifest m = mixed_manifest(10);
    SplitProtocol protocol;
    protocol.seed = 1;
    Split split = make_split(m, protocol);
    CHECK(split.train.size() == 8);
    CHECK(split.test.size() == 2);

    std::set<std::string> train_ids, test_ids;
    for (const SceneRecord& rec : split.train) train_ids.insert(rec.id);
    for (const SceneRecord& rec : split.test) test_ids.insert(rec.id);
    CHECK(train_ids.size() == 8);
    for (const std::string& id : test_ids) CHECK(train_ids.count(id) == 0);

    SUBCASE("1000 records split 800/200") {
        Manifest big = mixed_manifest(1000);
        Split s = make_split(big, protocol);
        CHECK(s.train.size() == 800);
        CHECK(s.test.size() == 200);
    }
    SUBCASE("same seed reproduces, a different seed differs") {
        Manifest big = mixed_manifest(100);
        Split a = make_split(big, protocol);
        Split b = make_split(big, protocol);
        REQUIRE(a.train.size() == b.train.size());
        bool same = true;
        for (std::size_t i = 0; i < a.train.size(); ++i) same &= a.train[i].id == b.train[i].id;
        CHECK(same);
        SplitProtocol other = protocol;
        other.seed = 2;
        Split c = make_split(big, other);
        bool all_equal = true;
        for (std::size_t i = 0; i < a.train.size(); ++i)
            all_equal &= a.train[i].id == c.train[i].id;
        CHECK_FALSE(all_equal);
    }
    SUBCASE("empty manifest") {
        Manifest empty;
        CHECK_THROWS_AS(make_split(empty, protocol), Error);
    }
}

TEST_CASE("cross-edit split keeps editor purity") {
    Manifest m = mixed_manifest(40);
    // sprinkle in a synthetic-editor fake that must be dropped
    m.records.push_back(record_of("synth", Label::fake, Editor::synthetic));

    SplitProtocol protocol;
    protocol.kind = SplitKind::cross_edit;
    protocol.train_editor = Editor::gaussctrl;
    protocol.test_editor = Editor::igs2gs;
    protocol.seed = 4;
    Split split = make_split(m, protocol);

    for (const SceneRecord& rec : split.train)
        if (rec.label == Label::fake) CHECK(rec.editor == Editor::gaussctrl);
    for (const SceneRecord& rec : split.test)
        if (rec.label == Label::fake) CHECK(rec.editor == Editor::igs2gs);
    CHECK(split.dropped_fakes == 1);

    // reals split 80-20 and disjoint
    std::int64_t train_reals = 0, test_reals = 0;
    std::set<std::string> train_ids;
    for (const SceneRecord& rec : split.train) {
        if (rec.label == Label::real) ++train_reals;
        train_ids.insert(rec.id);
    }
    for (const SceneRecord& rec : split.test) {
        if (rec.label == Label::real) ++test_reals;
        CHECK(train_ids.count(rec.id) == 0);
    }
    CHECK(train_reals == 16);
    CHECK(test_reals == 4);

    SUBCASE("missing editor fakes raise NoFakesForEditor") {
        Manifest reals_only;
        for (int i = 0; i < 6; ++i)
            reals_only.records.push_back(record_of("r" + std::to_string(i), Label::real, Editor::none));
        reals_only.records.push_back(record_of("g", Label::fake, Editor::gaussctrl));
        try {
            make_split(reals_only, protocol);
            FAIL("expected NoFakesForEditor");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::NoFakesForEditor);
        }
    }
    SUBCASE("identical editors are rejected") {
        SplitProtocol bad = protocol;
        bad.test_editor = Editor::gaussctrl;
        CHECK_THROWS_AS(make_split(m, bad), Error);
    }
}

TEST_CASE("metrics identities") {
    SUBCASE("perfect predictions") {
        std::vector<SceneRecord> truth;
        std::map<std::string, Label> predictions;
        for (int i = 0; i < 10; ++i) {
            truth.push_back(record_of("f" + std::to_string(i), Label::fake, Editor::gaussctrl));
            predictions["f" + std::to_string(i)] = Label::fake;
            truth.push_back(record_of("r" + std::to_string(i), Label::real, Editor::none));
            predictions["r" + std::to_string(i)] = Label::real;
        }
        Metrics m = evaluate(predictions, truth);
        CHECK(m.overall_acc == 100.0);
        CHECK(m.fake_acc == 100.0);
        CHECK(m.real_acc == 100.0);
    }

    SUBCASE("the rendering fixture 98.8 / 98.1 / 99.5") {
        std::vector<SceneRecord> truth;
        std::map<std::string, Label> predictions;
        for (int i = 0; i < 1000; ++i) {
            std::string fid = "f" + std::to_string(i);
            truth.push_back(record_of(fid, Label::fake, Editor::gaussctrl));
            predictions[fid] = i < 981 ? Label::fake : Label::real;
            std::string rid = "r" + std::to_string(i);
            truth.push_back(record_of(rid, Label::real, Editor::none));
            predictions[rid] = i < 995 ? Label::real : Label::fake;
        }
        Metrics m = evaluate(predictions, truth);
        CHECK(m.overall_acc == doctest::Approx(98.8));
        CHECK(m.fake_acc == doctest::Approx(98.1));
        CHECK(m.real_acc == doctest::Approx(99.5));
        CHECK(m.tp == 981);
        CHECK(m.tn == 995);
        // identities hold exactly
        CHECK(m.overall_acc * 2000 == doctest::Approx(100.0 * (m.tp + m.tn)));
    }

    SUBCASE("a missing prediction is reported with its id") {
        std::vector<SceneRecord> truth = {record_of("present", Label::real, Editor::none),
                                          record_of("absent", Label::real, Editor::none)};
        std::map<std::string, Label> predictions = {{"present", Label::real}};
        try {
            evaluate(predictions, truth);
            FAIL("expected MissingPrediction");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::MissingPrediction);
            CHECK(std::string(e.what()).find("absent") != std::string::npos);
        }
    }
}

TEST_CASE("report rendering") {
    Metrics m;
    m.overall_acc = 98.94;
    m.fake_acc = 98.12;
    m.real_acc = 99.52;
    m.tp = 981;
    m.tn = 995;
    m.fp = 5;
    m.fn = 19;
    std::vector<ReportRow> rows = {{"gaussctrl+igs2gs", "gaussctrl+igs2gs", m}};

    std::string table = render_report(rows, ReportFormat::table);
    CHECK(table.find("Overall") != std::string::npos);
    CHECK(table.find("Fake") != std::string::npos);
    CHECK(table.find("Real") != std::string::npos);
    CHECK(table.find("98.9") != std::string::npos);
    CHECK(table.find("98.1") != std::string::npos);
    CHECK(table.find("99.5") != std::string::npos);
    CHECK(render_report(rows, ReportFormat::table) == table);

    std::vector<ReportRow> two_rows = {rows[0], rows[0]};
    std::string csv = render_report(two_rows, ReportFormat::csv);
    int lines = 0;
    for (char c : csv)
        if (c == '\n') ++lines;
    CHECK(lines == 3);
    CHECK(csv.rfind("train,test,overall,fake,real\n", 0) == 0);
}

TEST_CASE("ablation bookkeeping on a tiny synthetic problem") {
    // in-memory scene source: fake = opacity logit shifted up
    std::map<std::string, RawScene> scenes;
    Manifest m;
    for (int i = 0; i < 12; ++i) {
        bool fake = i % 2 == 1;
        std::string id = "s" + std::to_string(i);
        RawScene raw = make_random_raw(12, 0, 2000 + static_cast<std::uint64_t>(i));
        if (fake)
            for (float& v : raw.opacity_logit) v += 3.0f;
        scenes[id] = raw;
        m.records.push_back(record_of(id, fake ? Label::fake : Label::real,
                                      fake ? Editor::synthetic : Editor::none));
    }
    SceneSource source = [&](const SceneRecord& rec) { return scenes.at(rec.id); };

    DetectorConfig config;
    config.width = 8;
    config.heads = 2;
    config.window = 4;
    config.encoder_blocks = 1;
    config.pooled_blocks = 0;
    config.decoder_blocks = 0;
    config.pool_prefix_bits = 2;
    config.serialize_bits = 6;
    config.sh_degree = 0;
    config.epochs = 3;
    config.batch_scenes = 4;
    config.seed = 5;

    SplitProtocol protocol;
    protocol.seed = 5;

    SUBCASE("empty group list leaves only the full row") {
        AblationResult result = run_ablation(m, config, {}, protocol, source);
        REQUIRE(result.rows.size() == 1);
        CHECK(result.rows[0].group_removed == "none");
        CHECK(result.rows[0].feature_dim == config.feature_dim());
        CHECK(result.csv.find("group_removed") == 0);
    }
    SUBCASE("removing a group shrinks the width by exactly its size") {
        std::vector<FeatureGroup> groups = {FeatureGroup::opacity, FeatureGroup::quaternion};
        AblationResult result = run_ablation(m, config, groups, protocol, source);
        REQUIRE(result.rows.size() == 3);
        CHECK(result.rows[0].feature_dim - result.rows[1].feature_dim == 1);
        CHECK(result.rows[0].feature_dim - result.rows[2].feature_dim == 4);
        CHECK(result.rows[1].group_removed == "opacity");
        CHECK(result.rows[2].group_removed == "quaternion");
    }
    SUBCASE("position cannot be ablated") {
        std::vector<FeatureGroup> groups = {FeatureGroup::position};
        CHECK_THROWS_AS(run_ablation(m, config, groups, protocol, source), Error);
    }
}

TEST_SUITE_END();
