// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "f3dgs/dataset.hpp"
#include "f3dgs/detector.hpp"

namespace f3dgs {

enum class SplitKind { mixed, cross_edit };

struct SplitProtocol {
    SplitKind kind = SplitKind::mixed;
    Editor train_editor = Editor::gaussctrl; // cross_edit only
    Editor test_editor = Editor::igs2gs;     // cross_edit only
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
};

struct Split {
    std::vector<SceneRecord> train;
    std::vector<SceneRecord> test;
    std::int64_t dropped_fakes = 0; // cross_edit: fakes from editors outside the pair
};

/// Mixed: seeded shuffle, first round(train_fraction*n) records train.
/// Cross-edit: reals split 80-20 with the seed; fakes go to the side whose
/// editor matches, other editors' fakes are dropped (counted).
Split make_split(const Manifest& manifest, const SplitProtocol& protocol);

struct Metrics {
    double overall_acc = 0.0; // percentages, full precision
    double fake_acc = 0.0;
    double real_acc = 0.0;
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
};

Metrics evaluate(const std::map<std::string, Label>& predictions,
                 std::span<const SceneRecord> truth);

struct ReportRow {
    std::string train_editors;
    std::string test_editors;
    Metrics metrics;
};

enum class ReportFormat { table, csv };

/// Columns Train / Test / Overall / Fake / Real; one decimal place, applied
/// only at render time.
std::string render_report(std::span<const ReportRow> rows, ReportFormat format);

/// Maps a record to its scene payload (file loader in the CLI, an in-memory
/// table in tests).
using SceneSource = std::function<RawScene(const SceneRecord&)>;

/// Builds detector examples for a record list and evaluates a trained
/// checkpoint into metrics.
Metrics evaluate_checkpoint(const Checkpoint& checkpoint, std::span<const SceneRecord> records,
                            const SceneSource& source, int threads = 1);

struct AblationRow {
    std::string group_removed; // "none" for the full-feature row
    int feature_dim = 0;
    Metrics metrics;
    double delta_overall_pp = 0.0; // vs the full-feature model
};

struct AblationResult {
    std::vector<AblationRow> rows;
    std::string csv;
};

/// Trains the full-feature model once, then one model per removed group with
/// the identical seed and split, reporting test-accuracy deltas in
/// percentage points.
AblationResult run_ablation(const Manifest& manifest, const DetectorConfig& base_config,
                            std::span<const FeatureGroup> groups, const SplitProtocol& protocol,
                            const SceneSource& source, std::ostream* log = nullptr);

/// Shared trainer entry: splits, computes training-set normalization, trains,
/// returns the checkpoint plus test metrics.
struct BenchRun {
    Checkpoint checkpoint;
    Metrics test_metrics;
    Split split;
};

BenchRun train_and_evaluate(const Manifest& manifest, const DetectorConfig& config,
                            const SplitProtocol& protocol, const SceneSource& source,
                            std::ostream* log = nullptr);

/// "editorA+editorB" summary of the fake editors present in a record list.
std::string editors_label(std::span<const SceneRecord> records);

} // namespace f3dgs
