// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
//
// Single entry point for the toolkit. Data goes to stdout, diagnostics to
// stderr; exit 0 on success, 1 on domain errors, 2 on usage errors.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "f3dgs/bench.hpp"
#include "f3dgs/dataset.hpp"
#include "f3dgs/detector.hpp"
#include "f3dgs/ply_io.hpp"
#include "f3dgs/rng.hpp"
#include "f3dgs/sogs.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace f3dgs;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class OutputFormat { table, csv, json_lines };

struct GlobalOpts {
    std::uint64_t seed = 0;
    bool quiet = false;
    std::string format = "table";
    int threads = 0; // 0 = resolve from F3DGS_THREADS or hardware

    OutputFormat output_format() const {
        if (format == "table") return OutputFormat::table;
        if (format == "csv") return OutputFormat::csv;
        if (format == "json-lines") return OutputFormat::json_lines;
        throw UsageError("unknown --format \"" + format + "\"");
    }

    int resolve_threads() const {
        if (threads > 0) return threads;
        if (const char* env = std::getenv("F3DGS_THREADS")) {
            int v = std::atoi(env);
            if (v > 0) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw > 0 ? static_cast<int>(hw) : 1;
    }

    void note(const std::string& message) const {
        if (!quiet) std::cerr << message << "\n";
    }
};

RawScene load_asset(const std::string& path) {
    if (fs::is_directory(path)) return decode_scene(load_package(path));
    return load_ply_file(path);
}

std::uint64_t directory_bytes(const std::string& dir) {
    std::uint64_t total = 0;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file()) total += entry.file_size();
    return total;
}

void print_stats(const SceneStats& stats, OutputFormat format) {
    if (format == OutputFormat::json_lines) {
        json head = {{"count", stats.count},
                     {"bbox_min", stats.bbox_min},
                     {"bbox_max", stats.bbox_max}};
        std::cout << head.dump() << "\n";
        for (const ChannelStats& ch : stats.channels) {
            json row = {{"channel", ch.name}, {"mean", ch.mean},  {"std", ch.stddev},
                        {"min", ch.min},      {"max", ch.max}};
            std::cout << row.dump() << "\n";
        }
        return;
    }
    if (format == OutputFormat::csv) {
        std::cout << "channel,mean,std,min,max\n";
        for (const ChannelStats& ch : stats.channels)
            std::printf("%s,%.9g,%.9g,%.9g,%.9g\n", ch.name.c_str(), ch.mean, ch.stddev, ch.min,
                        ch.max);
        return;
    }
    std::printf("gaussians: %lld\n", static_cast<long long>(stats.count));
    std::printf("bbox min: %.6g %.6g %.6g\n", stats.bbox_min[0], stats.bbox_min[1], stats.bbox_min[2]);
    std::printf("bbox max: %.6g %.6g %.6g\n", stats.bbox_max[0], stats.bbox_max[1], stats.bbox_max[2]);
    std::printf("%-12s %12s %12s %12s %12s\n", "channel", "mean", "std", "min", "max");
    for (const ChannelStats& ch : stats.channels)
        std::printf("%-12s %12.5g %12.5g %12.5g %12.5g\n", ch.name.c_str(), ch.mean, ch.stddev,
                    ch.min, ch.max);
}

EditFamily parse_family_flag(const std::string& token) {
    if (token == "color") return EditFamily::color;
    if (token == "material") return EditFamily::material_type;
    if (token == "background") return EditFamily::background_surface;
    throw UsageError("--family must be color, material or background");
}

SplitProtocol parse_protocol(const std::string& token, std::uint64_t seed) {
    SplitProtocol protocol;
    protocol.seed = seed;
    if (token == "mixed") {
        protocol.kind = SplitKind::mixed;
        return protocol;
    }
    if (token.rfind("cross:", 0) == 0) {
        std::string pair = token.substr(6);
        auto editor_of = [](char c) {
            if (c == 'G') return Editor::gaussctrl;
            if (c == 'I') return Editor::igs2gs;
            if (c == 'S') return Editor::synthetic;
            throw UsageError("cross protocol editors must be G, I or S");
        };
        if (pair.size() != 3 || pair[1] != '2')
            throw UsageError("cross protocol must look like cross:G2I");
        protocol.kind = SplitKind::cross_edit;
        protocol.train_editor = editor_of(pair[0]);
        protocol.test_editor = editor_of(pair[2]);
        if (protocol.train_editor == protocol.test_editor)
            throw UsageError("cross protocol editors must differ");
        return protocol;
    }
    throw UsageError("--protocol must be mixed or cross:X2Y");
}

std::vector<FeatureGroup> parse_groups(const std::string& csv) {
    std::vector<FeatureGroup> groups;
    std::stringstream ss(csv);
    std::string token;
    while (std::getline(ss, token, ',')) {
        if (token.empty()) continue;
        bool found = false;
        for (FeatureGroup g : kAllFeatureGroups) {
            if (token == feature_group_name(g)) {
                groups.push_back(g);
                found = true;
                break;
            }
        }
        if (!found) throw UsageError("unknown feature group \"" + token + "\"");
    }
    return groups;
}

struct DetectorFlags {
    int width = 64;
    int heads = 4;
    int window = 64;
    int encoder_blocks = 2;
    int pooled_blocks = 1;
    int decoder_blocks = 1;
    int epochs = 20;
    int batch_scenes = 8;
    double learning_rate = 1e-3;
    int sh_degree = 3;
    std::string domain = "activated";
    std::string drop_groups;

    void attach(CLI::App* cmd) {
        cmd->add_option("--width", width, "model width");
        cmd->add_option("--heads", heads, "attention heads");
        cmd->add_option("--window", window, "attention window");
        cmd->add_option("--enc-blocks", encoder_blocks, "encoder blocks");
        cmd->add_option("--pooled-blocks", pooled_blocks, "pooled-stage blocks");
        cmd->add_option("--dec-blocks", decoder_blocks, "decoder blocks");
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--batch", batch_scenes, "scenes per batch");
        cmd->add_option("--lr", learning_rate, "Adam step size");
        cmd->add_option("--sh-degree", sh_degree, "expected SH degree of the assets");
        cmd->add_option("--domain", domain, "activated|stored input domain");
        cmd->add_option("--drop-groups", drop_groups, "comma list of feature groups to drop");
    }

    DetectorConfig to_config(std::uint64_t seed) const {
        DetectorConfig config;
        config.width = width;
        config.heads = heads;
        config.window = window;
        config.encoder_blocks = encoder_blocks;
        config.pooled_blocks = pooled_blocks;
        config.decoder_blocks = decoder_blocks;
        config.epochs = epochs;
        config.batch_scenes = batch_scenes;
        config.adam.step_size = learning_rate;
        config.sh_degree = sh_degree;
        config.seed = seed;
        if (domain == "activated") config.domain = InputDomain::activated;
        else if (domain == "stored") config.domain = InputDomain::stored;
        else throw UsageError("--domain must be activated or stored");
        for (FeatureGroup g : parse_groups(drop_groups)) config.mask = config.mask.without(g);
        config.validate();
        return config;
    }
};

void print_report(const std::vector<ReportRow>& rows, OutputFormat format) {
    if (format == OutputFormat::json_lines) {
        for (const ReportRow& row : rows) {
            json j = {{"train", row.train_editors},
                      {"test", row.test_editors},
                      {"overall", row.metrics.overall_acc},
                      {"fake", row.metrics.fake_acc},
                      {"real", row.metrics.real_acc},
                      {"counts", {{"tp", row.metrics.tp}, {"tn", row.metrics.tn},
                                  {"fp", row.metrics.fp}, {"fn", row.metrics.fn}}}};
            std::cout << j.dump() << "\n";
        }
        return;
    }
    std::cout << render_report(rows, format == OutputFormat::csv ? ReportFormat::csv
                                                                 : ReportFormat::table);
}

RawScene make_synthetic_raw(std::int64_t count, int sh_degree, Rng& rng) {
    RawScene raw;
    raw.count = count;
    raw.sh_degree = sh_degree;
    const int rest = sh_rest_width(sh_degree);
    raw.position.resize(static_cast<std::size_t>(count) * 3);
    raw.normal.assign(static_cast<std::size_t>(count) * 3, 0.0f);
    raw.f_dc.resize(static_cast<std::size_t>(count) * 3);
    raw.f_rest.resize(static_cast<std::size_t>(count) * static_cast<std::size_t>(rest));
    raw.opacity_logit.resize(static_cast<std::size_t>(count));
    raw.log_scale.resize(static_cast<std::size_t>(count) * 3);
    raw.quat.resize(static_cast<std::size_t>(count) * 4);
    for (std::int64_t i = 0; i < count; ++i) {
        for (int k = 0; k < 3; ++k) {
            raw.position[i * 3 + k] = static_cast<float>(rng.uniform(-1.0, 1.0));
            raw.f_dc[i * 3 + k] = static_cast<float>(rng.uniform(-1.0, 1.0));
            raw.log_scale[i * 3 + k] = static_cast<float>(rng.uniform(-5.0, -2.0));
        }
        raw.opacity_logit[i] = static_cast<float>(rng.uniform(-4.0, 4.0));
        for (int k = 0; k < 4; ++k) raw.quat[i * 4 + k] = static_cast<float>(rng.normal());
        for (int k = 0; k < rest; ++k)
            raw.f_rest[i * rest + k] = static_cast<float>(rng.uniform(-0.5, 0.5));
    }
    return raw;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"3D Gaussian Splatting forensics toolkit"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "seed for every randomized step")->capture_default_str();
    app.add_flag("--quiet", g.quiet, "suppress progress output");
    app.add_option("--format", g.format, "table|csv|json-lines")->capture_default_str();
    app.add_option("--threads", g.threads, "worker threads (0 = auto, training always runs 1)");

    std::function<void()> action;

    // ------------------------------------------------------------------ splat
    CLI::App* splat = app.add_subcommand("splat", "PLY and SOGS package tools");
    splat->require_subcommand(1);
    splat->fallthrough();

    {
        auto* cmd = splat->add_subcommand("inspect", "print per-channel scene statistics");
        cmd->fallthrough();
        auto input = std::make_shared<std::string>();
        cmd->add_option("input", *input, "PLY file or package directory")->required();
        cmd->callback([&, input] {
            action = [&, input] {
                RawScene raw = load_asset(*input);
                print_stats(scene_stats(activate(raw)), g.output_format());
            };
        });
    }
    {
        auto* cmd = splat->add_subcommand("convert", "rewrite a PLY in canonical property order");
        cmd->fallthrough();
        auto input = std::make_shared<std::string>();
        auto output = std::make_shared<std::string>();
        cmd->add_option("input", *input)->required();
        cmd->add_option("-o,--output", *output)->required();
        cmd->callback([&, input, output] {
            action = [&, input, output] {
                save_ply_file(load_asset(*input), *output);
                g.note("wrote " + *output);
            };
        });
    }
    {
        auto* cmd = splat->add_subcommand("encode", "compress a PLY into a SOGS package");
        cmd->fallthrough();
        auto input = std::make_shared<std::string>();
        auto output = std::make_shared<std::string>();
        auto bits = std::make_shared<int>(8);
        auto passes = std::make_shared<int>(2);
        auto store_perm = std::make_shared<bool>(false);
        cmd->add_option("input", *input)->required();
        cmd->add_option("-o,--output", *output, "package directory")->required();
        cmd->add_option("--bits", *bits, "code bits per channel");
        cmd->add_option("--passes", *passes, "layout refinement passes");
        cmd->add_flag("--store-perm", *store_perm, "persist the original order");
        cmd->callback([&, input, output, bits, passes, store_perm] {
            action = [&, input, output, bits, passes, store_perm] {
                RawScene raw = load_ply_file(*input);
                EncodeOptions opts;
                opts.bits = *bits;
                opts.refine_passes = *passes;
                opts.store_permutation = *store_perm;
                SogsPackage pkg = encode_scene(raw, opts);
                save_package(pkg, *output, g.resolve_threads());
                g.note("encoded " + std::to_string(raw.count) + " gaussians into " + *output);
            };
        });
    }
    {
        auto* cmd = splat->add_subcommand("decode", "decompress a SOGS package into a PLY");
        cmd->fallthrough();
        auto input = std::make_shared<std::string>();
        auto output = std::make_shared<std::string>();
        cmd->add_option("input", *input, "package directory")->required();
        cmd->add_option("-o,--output", *output)->required();
        cmd->callback([&, input, output] {
            action = [&, input, output] {
                save_ply_file(decode_scene(load_package(*input)), *output);
                g.note("wrote " + *output);
            };
        });
    }
    {
        auto* cmd = splat->add_subcommand("report", "compression ratio of a package vs its PLY");
        cmd->fallthrough();
        auto ply = std::make_shared<std::string>();
        auto dir = std::make_shared<std::string>();
        cmd->add_option("ply", *ply)->required();
        cmd->add_option("package", *dir)->required();
        cmd->callback([&, ply, dir] {
            action = [&, ply, dir] {
                RawScene raw = load_ply_file(*ply);
                CompressionReport rep = compression_report(raw, directory_bytes(*dir));
                for (const auto& entry : fs::directory_iterator(*dir)) {
                    if (entry.path().extension() == ".png")
                        rep.per_channel_bytes.emplace_back(entry.path().stem().string(),
                                                           entry.file_size());
                }
                std::sort(rep.per_channel_bytes.begin(), rep.per_channel_bytes.end());
                OutputFormat format = g.output_format();
                if (format == OutputFormat::json_lines) {
                    json j = {{"raw_bytes", rep.raw_bytes},
                              {"packed_bytes", rep.packed_bytes},
                              {"ratio", rep.ratio}};
                    std::cout << j.dump() << "\n";
                    for (const auto& [name, bytes] : rep.per_channel_bytes)
                        std::cout << json({{"channel", name}, {"bytes", bytes}}).dump() << "\n";
                } else if (format == OutputFormat::csv) {
                    std::cout << "key,value\nraw_bytes," << rep.raw_bytes << "\npacked_bytes,"
                              << rep.packed_bytes << "\nratio," << rep.ratio << "\n";
                    for (const auto& [name, bytes] : rep.per_channel_bytes)
                        std::cout << "channel:" << name << "," << bytes << "\n";
                } else {
                    std::printf("raw bytes:    %llu\n", static_cast<unsigned long long>(rep.raw_bytes));
                    std::printf("packed bytes: %llu\n", static_cast<unsigned long long>(rep.packed_bytes));
                    std::printf("ratio:        %.3f\n", rep.ratio);
                }
            };
        });
    }

    // ---------------------------------------------------------------- dataset
    CLI::App* dataset = app.add_subcommand("dataset", "manifest construction tools");
    dataset->require_subcommand(1);
    dataset->fallthrough();

    {
        auto* cmd = dataset->add_subcommand("balance", "sample min-count records per category");
        cmd->fallthrough();
        auto input = std::make_shared<std::string>();
        auto output = std::make_shared<std::string>();
        cmd->add_option("--manifest", *input)->required();
        cmd->add_option("-o,--output", *output)->required();
        cmd->callback([&, input, output] {
            action = [&, input, output] {
                Manifest m = read_manifest(*input);
                Manifest balanced;
                balanced.seed = g.seed;
                balanced.records = balance_categories(m.records, g.seed);
                write_manifest(balanced, *output);
                g.note("kept " + std::to_string(balanced.records.size()) + " of " +
                       std::to_string(m.records.size()) + " records");
            };
        });
    }
    {
        auto* cmd = dataset->add_subcommand("assign-edits", "balanced edit-family assignment");
        cmd->fallthrough();
        auto input = std::make_shared<std::string>();
        auto uniform = std::make_shared<bool>(false);
        cmd->add_option("--manifest", *input)->required();
        cmd->add_flag("--uniform", *uniform,
                      "sample one family per scene uniformly instead of balancing");
        cmd->callback([&, input, uniform] {
            action = [&, input, uniform] {
                Manifest m = read_manifest(*input);
                std::vector<std::string> ids;
                for (const SceneRecord& rec : m.records) ids.push_back(rec.id);
                auto assignment =
                    *uniform ? sample_edit_types(ids, g.seed) : assign_edit_types(ids, g.seed);
                OutputFormat format = g.output_format();
                if (format == OutputFormat::csv) std::cout << "id,edit_family\n";
                for (const auto& [id, family] : assignment) {
                    if (format == OutputFormat::json_lines)
                        std::cout << json({{"id", id}, {"edit_family", edit_family_name(family)}}).dump()
                                  << "\n";
                    else
                        std::cout << id << (format == OutputFormat::csv ? "," : "  ")
                                  << edit_family_name(family) << "\n";
                }
            };
        });
    }
    {
        auto* cmd = dataset->add_subcommand("synth-edit", "apply a synthetic scene edit");
        cmd->fallthrough();
        auto input = std::make_shared<std::string>();
        auto output = std::make_shared<std::string>();
        auto family = std::make_shared<std::string>();
        auto magnitude = std::make_shared<double>(0.5);
        cmd->add_option("input", *input)->required();
        cmd->add_option("-o,--output", *output)->required();
        cmd->add_option("--family", *family, "color|material|background")->required();
        cmd->add_option("--magnitude", *magnitude, "edit strength in (0,1]");
        cmd->callback([&, input, output, family, magnitude] {
            action = [&, input, output, family, magnitude] {
                GaussianScene scene = activate(load_asset(*input));
                GaussianScene edited = synth_edit(scene, parse_family_flag(*family), *magnitude, g.seed);
                for (double& o : edited.opacity) o = std::clamp(o, 1e-6, 1.0 - 1e-6);
                save_ply_file(deactivate(edited), *output);
                g.note("wrote " + *output);
            };
        });
    }

    // ---------------------------------------------------------------- caption
    CLI::App* caption = app.add_subcommand("caption", "caption editing prompts");
    caption->require_subcommand(1);
    caption->fallthrough();
    {
        auto* cmd = caption->add_subcommand("prompt", "emit the editing prompt for a caption");
        cmd->fallthrough();
        auto template_id = std::make_shared<int>(1);
        auto text = std::make_shared<std::string>();
        cmd->add_option("--template", *template_id, "prompt template 1|2|3")->required();
        cmd->add_option("--caption", *text)->required();
        cmd->callback([&, template_id, text] {
            action = [&, template_id, text] {
                std::cout << build_edit_prompt(*text, *template_id) << "\n";
            };
        });
    }

    // ----------------------------------------------------------------- detect
    CLI::App* detect = app.add_subcommand("detect", "train and run the scene detector");
    detect->require_subcommand(1);
    detect->fallthrough();

    {
        auto* cmd = detect->add_subcommand("train", "train a detector on a manifest");
        cmd->fallthrough();
        auto manifest_path = std::make_shared<std::string>();
        auto output = std::make_shared<std::string>("detector.f3dd");
        auto flags = std::make_shared<DetectorFlags>();
        cmd->add_option("--manifest", *manifest_path)->required();
        cmd->add_option("-o,--output", *output, "checkpoint path");
        flags->attach(cmd);
        cmd->callback([&, manifest_path, output, flags] {
            action = [&, manifest_path, output, flags] {
                Manifest m = read_manifest(*manifest_path);
                if (m.records.empty()) raise(ErrorKind::EmptyManifest, *manifest_path);
                DetectorConfig config = flags->to_config(g.seed);

                std::vector<RawScene> scenes;
                std::vector<GaussianScene> activated;
                for (const SceneRecord& rec : m.records) {
                    scenes.push_back(load_asset(rec.asset_path));
                    activated.push_back(activate(scenes.back()));
                }
                std::vector<const GaussianScene*> ptrs;
                for (const GaussianScene& s : activated) ptrs.push_back(&s);
                NormalizationSpec norm = compute_normalization(ptrs);

                std::vector<SceneExample> examples;
                for (std::size_t i = 0; i < scenes.size(); ++i)
                    examples.push_back(make_example(scenes[i], config, norm,
                                                    m.records[i].label == Label::fake ? 1 : 0,
                                                    m.records[i].id));
                EpochCallback log;
                if (!g.quiet) {
                    log = [](int epoch, const TrainMetrics& tm) {
                        std::fprintf(stderr, "epoch %d loss %.5f acc %.4f\n", epoch, tm.loss,
                                     tm.accuracy);
                    };
                }
                Checkpoint ckpt = train(examples, config, norm, log);
                save_checkpoint(ckpt, *output);
                json j = {{"checkpoint", *output},
                          {"train_loss", ckpt.metrics.loss},
                          {"train_accuracy", ckpt.metrics.accuracy},
                          {"epochs", ckpt.epoch}};
                std::cout << j.dump() << "\n";
            };
        });
    }
    {
        auto* cmd = detect->add_subcommand("predict", "score assets with a checkpoint");
        cmd->fallthrough();
        auto ckpt_path = std::make_shared<std::string>();
        auto assets = std::make_shared<std::vector<std::string>>();
        cmd->add_option("--checkpoint", *ckpt_path)->required();
        cmd->add_option("assets", *assets, "PLY files or package directories")->required();
        cmd->callback([&, ckpt_path, assets] {
            action = [&, ckpt_path, assets] {
                Checkpoint ckpt = load_checkpoint(*ckpt_path);
                OutputFormat format = g.output_format();
                if (format == OutputFormat::csv) std::cout << "asset,score,label\n";
                for (const std::string& asset : *assets) {
                    Prediction pred = predict(ckpt, load_asset(asset));
                    if (format == OutputFormat::json_lines)
                        std::cout << json({{"asset", asset},
                                           {"score", pred.score},
                                           {"label", label_name(pred.label)}}).dump()
                                  << "\n";
                    else if (format == OutputFormat::csv)
                        std::printf("%s,%.6f,%s\n", asset.c_str(), pred.score, label_name(pred.label));
                    else
                        std::printf("%-40s %.4f  %s\n", asset.c_str(), pred.score,
                                    label_name(pred.label));
                }
            };
        });
    }
    {
        auto* cmd = detect->add_subcommand("gradcheck", "finite-difference gradient verification");
        cmd->fallthrough();
        auto probes = std::make_shared<int>(200);
        auto eps = std::make_shared<double>(1e-4);
        auto corrupt = std::make_shared<bool>(false);
        auto scenes_n = std::make_shared<int>(3);
        auto gaussians_n = std::make_shared<int>(50);
        auto flags = std::make_shared<DetectorFlags>();
        cmd->add_option("--probes", *probes);
        cmd->add_option("--eps", *eps);
        cmd->add_flag("--corrupt", *corrupt, "double one gradient entry to prove detection");
        cmd->add_option("--scenes", *scenes_n);
        cmd->add_option("--gaussians", *gaussians_n);
        flags->attach(cmd);
        cmd->callback([&, probes, eps, corrupt, scenes_n, gaussians_n, flags] {
            action = [&, probes, eps, corrupt, scenes_n, gaussians_n, flags] {
                DetectorConfig config = flags->to_config(g.seed);
                Rng rng(g.seed + 17);
                NormalizationSpec norm;
                norm.has_log_scale_stats = true;
                norm.log_scale_mean = {-3.5, -3.5, -3.5};
                norm.log_scale_std = {1.0, 1.0, 1.0};
                std::vector<SceneExample> examples;
                for (int s = 0; s < *scenes_n; ++s)
                    examples.push_back(make_example(make_synthetic_raw(*gaussians_n, config.sh_degree, rng),
                                                    config, norm, s % 2, "g" + std::to_string(s)));
                std::vector<const SceneExample*> ptrs;
                for (const SceneExample& ex : examples) ptrs.push_back(&ex);
                PackedBatch batch = pack_batch(ptrs);
                DetectorParams params = DetectorParams::init(config);
                double err = grad_check(batch, params, config, *probes, *eps, *corrupt);
                std::cout << json({{"max_relative_error", err},
                                   {"probes", *probes},
                                   {"eps", *eps},
                                   {"corrupted", *corrupt}}).dump()
                          << "\n";
            };
        });
    }

    // ------------------------------------------------------------------ bench
    CLI::App* bench = app.add_subcommand("bench", "split protocols, evaluation, ablations");
    bench->require_subcommand(1);
    bench->fallthrough();

    {
        auto* cmd = bench->add_subcommand("split", "produce train/test manifests");
        cmd->fallthrough();
        auto manifest_path = std::make_shared<std::string>();
        auto protocol_token = std::make_shared<std::string>("mixed");
        auto outdir = std::make_shared<std::string>();
        cmd->add_option("--manifest", *manifest_path)->required();
        cmd->add_option("--protocol", *protocol_token, "mixed|cross:G2I|cross:I2G");
        cmd->add_option("-o,--output", *outdir, "directory for train.jsonl/test.jsonl");
        cmd->callback([&, manifest_path, protocol_token, outdir] {
            action = [&, manifest_path, protocol_token, outdir] {
                SplitProtocol protocol = parse_protocol(*protocol_token, g.seed);
                Manifest m = read_manifest(*manifest_path);
                Split split = make_split(m, protocol);
                if (!outdir->empty()) {
                    fs::create_directories(*outdir);
                    Manifest train_m{split.train, g.seed};
                    Manifest test_m{split.test, g.seed};
                    write_manifest(train_m, (fs::path(*outdir) / "train.jsonl").string());
                    write_manifest(test_m, (fs::path(*outdir) / "test.jsonl").string());
                    g.note("wrote " + *outdir + "/train.jsonl and test.jsonl");
                }
                std::cout << json({{"train", split.train.size()},
                                   {"test", split.test.size()},
                                   {"dropped_fakes", split.dropped_fakes}}).dump()
                          << "\n";
            };
        });
    }
    {
        auto* cmd = bench->add_subcommand("eval", "evaluate a checkpoint against a manifest");
        cmd->fallthrough();
        auto ckpt_path = std::make_shared<std::string>();
        auto manifest_path = std::make_shared<std::string>();
        auto out_path = std::make_shared<std::string>();
        auto train_label = std::make_shared<std::string>("checkpoint");
        cmd->add_option("--checkpoint", *ckpt_path)->required();
        cmd->add_option("--manifest", *manifest_path)->required();
        cmd->add_option("--out", *out_path, "also write the report (CSV) to this path");
        cmd->add_option("--train-label", *train_label, "train column label for the report");
        cmd->callback([&, ckpt_path, manifest_path, out_path, train_label] {
            action = [&, ckpt_path, manifest_path, out_path, train_label] {
                Checkpoint ckpt = load_checkpoint(*ckpt_path);
                Manifest m = read_manifest(*manifest_path);
                if (m.records.empty()) raise(ErrorKind::EmptyManifest, *manifest_path);
                Metrics metrics = evaluate_checkpoint(
                    ckpt, m.records, [](const SceneRecord& rec) { return load_asset(rec.asset_path); },
                    g.resolve_threads());
                std::vector<ReportRow> rows = {{*train_label, editors_label(m.records), metrics}};
                print_report(rows, g.output_format());
                if (!out_path->empty()) {
                    std::ofstream out(*out_path, std::ios::trunc);
                    out << render_report(rows, ReportFormat::csv);
                }
            };
        });
    }
    {
        auto* cmd = bench->add_subcommand("ablate", "feature-group removal study");
        cmd->fallthrough();
        auto manifest_path = std::make_shared<std::string>();
        auto groups_csv = std::make_shared<std::string>("opacity,scale,quaternion,sh0,sh_rest");
        auto protocol_token = std::make_shared<std::string>("mixed");
        auto out_path = std::make_shared<std::string>();
        auto flags = std::make_shared<DetectorFlags>();
        cmd->add_option("--manifest", *manifest_path)->required();
        cmd->add_option("--groups", *groups_csv, "comma list of groups to remove");
        cmd->add_option("--protocol", *protocol_token);
        cmd->add_option("--out", *out_path, "write the CSV to this path");
        flags->attach(cmd);
        cmd->callback([&, manifest_path, groups_csv, protocol_token, out_path, flags] {
            action = [&, manifest_path, groups_csv, protocol_token, out_path, flags] {
                DetectorConfig config = flags->to_config(g.seed);
                SplitProtocol protocol = parse_protocol(*protocol_token, g.seed);
                std::vector<FeatureGroup> groups = parse_groups(*groups_csv);
                Manifest m = read_manifest(*manifest_path);
                AblationResult result = run_ablation(
                    m, config, groups, protocol,
                    [](const SceneRecord& rec) { return load_asset(rec.asset_path); },
                    g.quiet ? nullptr : &std::cerr);
                std::cout << result.csv;
                if (!out_path->empty()) {
                    std::ofstream out(*out_path, std::ios::trunc);
                    out << result.csv;
                }
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (action) action();
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
