// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#include "f3dgs/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "f3dgs/rng.hpp"

namespace f3dgs {

Split make_split(const Manifest& manifest, const SplitProtocol& protocol) {
    if (manifest.records.empty()) raise(ErrorKind::EmptyManifest, "manifest holds no records");
    if (protocol.train_fraction <= 0.0 || protocol.train_fraction >= 1.0)
        raise(ErrorKind::OutOfRange, "train_fraction must lie strictly inside (0,1)");

    Split split;
    if (protocol.kind == SplitKind::mixed) {
        std::vector<SceneRecord> shuffled = manifest.records;
        Rng rng(protocol.seed);
        shuffle(shuffled, rng);
        auto n_train = static_cast<std::size_t>(
            std::llround(protocol.train_fraction * static_cast<double>(shuffled.size())));
        n_train = std::min(n_train, shuffled.size());
        split.train.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
        split.test.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_train), shuffled.end());
        return split;
    }

    if (protocol.train_editor == protocol.test_editor)
        raise(ErrorKind::OutOfRange, "cross-edit protocols require two distinct editors");

    std::vector<SceneRecord> reals;
    std::vector<SceneRecord> train_fakes, test_fakes;
    for (const SceneRecord& rec : manifest.records) {
        if (rec.label == Label::real) {
            reals.push_back(rec);
        } else if (rec.editor == protocol.train_editor) {
            train_fakes.push_back(rec);
        } else if (rec.editor == protocol.test_editor) {
            test_fakes.push_back(rec);
        } else {
            ++split.dropped_fakes;
        }
    }
    if (train_fakes.empty())
        raise(ErrorKind::NoFakesForEditor,
              std::string("no fake records for train editor ") + editor_name(protocol.train_editor));
    if (test_fakes.empty())
        raise(ErrorKind::NoFakesForEditor,
              std::string("no fake records for test editor ") + editor_name(protocol.test_editor));

    Rng rng(protocol.seed);
    shuffle(reals, rng);
    auto n_train = static_cast<std::size_t>(
        std::llround(protocol.train_fraction * static_cast<double>(reals.size())));
    n_train = std::min(n_train, reals.size());

    split.train.assign(reals.begin(), reals.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.train.insert(split.train.end(), train_fakes.begin(), train_fakes.end());
    split.test.assign(reals.begin() + static_cast<std::ptrdiff_t>(n_train), reals.end());
    split.test.insert(split.test.end(), test_fakes.begin(), test_fakes.end());
    return split;
}

Metrics evaluate(const std::map<std::string, Label>& predictions,
                 std::span<const SceneRecord> truth) {
    std::vector<std::string> missing;
    Metrics m;
    for (const SceneRecord& rec : truth) {
        auto it = predictions.find(rec.id);
        if (it == predictions.end()) {
            missing.push_back(rec.id);
            continue;
        }
        bool truth_fake = rec.label == Label::fake;
        bool pred_fake = it->second == Label::fake;
        if (truth_fake && pred_fake) ++m.tp;
        else if (truth_fake && !pred_fake) ++m.fn;
        else if (!truth_fake && pred_fake) ++m.fp;
        else ++m.tn;
    }
    if (!missing.empty()) {
        std::string names;
        for (std::size_t i = 0; i < missing.size() && i < 8; ++i)
            names += (i ? ", " : "") + missing[i];
        if (missing.size() > 8) names += ", ...";
        raise(ErrorKind::MissingPrediction,
              std::to_string(missing.size()) + " truth ids lack predictions: " + names);
    }
    std::int64_t total = m.tp + m.tn + m.fp + m.fn;
    if (total == 0) raise(ErrorKind::EmptyInput, "nothing to evaluate");
    m.overall_acc = 100.0 * static_cast<double>(m.tp + m.tn) / static_cast<double>(total);
    m.fake_acc = (m.tp + m.fn) > 0
                     ? 100.0 * static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn)
                     : 0.0;
    m.real_acc = (m.tn + m.fp) > 0
                     ? 100.0 * static_cast<double>(m.tn) / static_cast<double>(m.tn + m.fp)
                     : 0.0;
    return m;
}

namespace {

std::string fmt1(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

} // namespace

std::string render_report(std::span<const ReportRow> rows, ReportFormat format) {
    if (rows.empty()) raise(ErrorKind::EmptyInput, "report needs at least one row");
    std::string out;
    if (format == ReportFormat::csv) {
        out += "train,test,overall,fake,real\n";
        for (const ReportRow& row : rows) {
            out += row.train_editors + "," + row.test_editors + "," + fmt1(row.metrics.overall_acc) +
                   "," + fmt1(row.metrics.fake_acc) + "," + fmt1(row.metrics.real_acc) + "\n";
        }
        return out;
    }

    std::size_t train_w = 5, test_w = 4;
    for (const ReportRow& row : rows) {
        train_w = std::max(train_w, row.train_editors.size());
        test_w = std::max(test_w, row.test_editors.size());
    }
    auto pad = [](const std::string& s, std::size_t w) {
        return s + std::string(w > s.size() ? w - s.size() : 0, ' ');
    };
    out += pad("Train", train_w + 2) + pad("Test", test_w + 2) + pad("Overall", 9) +
           pad("Fake", 7) + "Real\n";
    for (const ReportRow& row : rows) {
        out += pad(row.train_editors, train_w + 2) + pad(row.test_editors, test_w + 2) +
               pad(fmt1(row.metrics.overall_acc), 9) + pad(fmt1(row.metrics.fake_acc), 7) +
               fmt1(row.metrics.real_acc) + "\n";
    }
    return out;
}

Metrics evaluate_checkpoint(const Checkpoint& checkpoint, std::span<const SceneRecord> records,
                            const SceneSource& source, int threads) {
    if (records.empty()) raise(ErrorKind::EmptyInput, "no records to evaluate");
    std::vector<Label> labels(records.size(), Label::real);

    auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            RawScene raw = source(records[i]);
            labels[i] = predict(checkpoint, raw).label;
        }
    };
    if (threads <= 1 || records.size() < 2) {
        worker(0, records.size());
    } else {
        std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), records.size());
        std::vector<std::thread> pool;
        std::size_t chunk = (records.size() + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            std::size_t begin = w * chunk;
            std::size_t end = std::min(records.size(), begin + chunk);
            if (begin < end) pool.emplace_back(worker, begin, end);
        }
        for (auto& t : pool) t.join();
    }

    std::map<std::string, Label> predictions;
    for (std::size_t i = 0; i < records.size(); ++i) predictions[records[i].id] = labels[i];
    return evaluate(predictions, records);
}

namespace {

// materialize every record once; training touches scenes repeatedly
struct SceneTable {
    std::vector<RawScene> scenes;
    std::map<std::string, std::size_t> by_id;
};

SceneTable load_scenes(std::span<const SceneRecord> records, const SceneSource& source) {
    SceneTable table;
    for (const SceneRecord& rec : records) {
        table.by_id[rec.id] = table.scenes.size();
        table.scenes.push_back(source(rec));
    }
    return table;
}

Checkpoint train_records(std::span<const SceneRecord> records, const SceneTable& table,
                         const DetectorConfig& config, std::ostream* log) {
    std::vector<GaussianScene> activated;
    std::vector<const GaussianScene*> activated_ptrs;
    activated.reserve(records.size());
    for (const SceneRecord& rec : records)
        activated.push_back(activate(table.scenes[table.by_id.at(rec.id)]));
    for (const GaussianScene& s : activated) activated_ptrs.push_back(&s);
    NormalizationSpec norm = compute_normalization(activated_ptrs);

    std::vector<SceneExample> examples;
    examples.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const SceneRecord& rec = records[i];
        examples.push_back(make_example(table.scenes[table.by_id.at(rec.id)], config, norm,
                                        rec.label == Label::fake ? 1 : 0, rec.id));
    }

    EpochCallback on_epoch;
    if (log) {
        on_epoch = [log](int epoch, const TrainMetrics& m) {
            *log << "epoch " << epoch << " loss " << m.loss << " acc " << m.accuracy << "\n";
        };
    }
    return train(examples, config, norm, on_epoch);
}

} // namespace

std::string editors_label(std::span<const SceneRecord> records) {
    std::set<std::string> editors;
    for (const SceneRecord& rec : records)
        if (rec.label == Label::fake) editors.insert(editor_name(rec.editor));
    if (editors.empty()) return "-";
    std::string out;
    for (const std::string& e : editors) out += (out.empty() ? "" : "+") + e;
    return out;
}

BenchRun train_and_evaluate(const Manifest& manifest, const DetectorConfig& config,
                            const SplitProtocol& protocol, const SceneSource& source,
                            std::ostream* log) {
    BenchRun run;
    run.split = make_split(manifest, protocol);
    SceneTable table = load_scenes(manifest.records, source);
    run.checkpoint = train_records(run.split.train, table, config, log);
    run.test_metrics =
        evaluate_checkpoint(run.checkpoint, run.split.test,
                            [&](const SceneRecord& rec) { return table.scenes[table.by_id.at(rec.id)]; });
    return run;
}

AblationResult run_ablation(const Manifest& manifest, const DetectorConfig& base_config,
                            std::span<const FeatureGroup> groups, const SplitProtocol& protocol,
                            const SceneSource& source, std::ostream* log) {
    for (FeatureGroup g : groups) {
        if (g == FeatureGroup::position)
            raise(ErrorKind::OutOfRange, "position is not an ablatable group");
        if (!base_config.mask.enabled(g))
            raise(ErrorKind::OutOfRange,
                  std::string("group ") + feature_group_name(g) + " is not enabled in the base mask");
    }

    Split split = make_split(manifest, protocol);
    SceneTable table = load_scenes(manifest.records, source);
    auto lookup = [&](const SceneRecord& rec) { return table.scenes[table.by_id.at(rec.id)]; };

    AblationResult result;
    if (log) *log << "training full-feature model\n";
    Checkpoint full = train_records(split.train, table, base_config, nullptr);
    Metrics full_metrics = evaluate_checkpoint(full, split.test, lookup);
    result.rows.push_back({"none", base_config.feature_dim(), full_metrics, 0.0});

    for (FeatureGroup g : groups) {
        DetectorConfig config = base_config;
        config.mask = base_config.mask.without(g);
        if (log) *log << "training without " << feature_group_name(g) << "\n";
        Checkpoint ckpt = train_records(split.train, table, config, nullptr);
        Metrics metrics = evaluate_checkpoint(ckpt, split.test, lookup);
        result.rows.push_back({feature_group_name(g), config.feature_dim(), metrics,
                               metrics.overall_acc - full_metrics.overall_acc});
    }

    std::ostringstream csv;
    csv << "group_removed,feature_width,overall,fake,real,delta_overall_pp,split,seed,epochs,model_width\n";
    const char* split_name = protocol.kind == SplitKind::mixed ? "mixed" : "cross_edit";
    for (const AblationRow& row : result.rows) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%d,%.3f,%.3f,%.3f,%.3f,%s,%llu,%d,%d\n",
                      row.group_removed.c_str(), row.feature_dim, row.metrics.overall_acc,
                      row.metrics.fake_acc, row.metrics.real_acc, row.delta_overall_pp, split_name,
                      static_cast<unsigned long long>(protocol.seed), base_config.epochs,
                      base_config.width);
        csv << buf;
    }
    result.csv = csv.str();
    return result;
}

} // namespace f3dgs
