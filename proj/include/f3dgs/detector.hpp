// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "f3dgs/dataset.hpp"
#include "f3dgs/scene.hpp"

namespace f3dgs {

/// Scenes of varying Gaussian counts concatenated row-wise; scene b owns
/// rows scene_offsets[b] .. scene_offsets[b+1].
struct PackedBatch {
    FeatureMatrix features;                   // [M,F]
    std::vector<double> positions;            // [M,3]
    std::vector<std::int64_t> scene_offsets;  // [B+1], strictly increasing
    std::vector<int> labels;                  // [B]; 0 = real, 1 = fake (empty for inference)

    std::int64_t scene_count() const {
        return static_cast<std::int64_t>(scene_offsets.size()) - 1;
    }
};

enum class AxisOrder { xyz, yzx, zxy };
enum class InputDomain { activated, stored };

struct AdamConfig {
    double step_size = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct DetectorConfig {
    int width = 64;            // model width D
    int heads = 4;             // attention heads, width % heads == 0
    int window = 64;           // attention window length K
    int encoder_blocks = 2;
    int pooled_blocks = 1;
    int decoder_blocks = 1;
    int pool_prefix_bits = 6;  // coarse grid for pooling groups
    int serialize_bits = 10;   // spatial quantization for serialization
    FeatureGroupMask mask;
    InputDomain domain = InputDomain::activated;
    int sh_degree = 3;
    std::uint64_t seed = 0;
    AdamConfig adam;
    int epochs = 20;
    int batch_scenes = 8;

    int feature_dim() const { return feature_width(mask, sh_degree); }
    int total_blocks() const { return encoder_blocks + pooled_blocks + decoder_blocks; }
    void validate() const;
};

/// All learnable tensors as one flat vector with a fixed declaration order:
/// embed, encoder blocks, pooled blocks, decoder blocks, head. The flat
/// layout is what Adam, grad_check probing and checkpointing operate on.
struct DetectorParams {
    int feature_dim = 0;
    int width = 0;
    int encoder_blocks = 0;
    int pooled_blocks = 0;
    int decoder_blocks = 0;
    std::vector<double> values;

    static DetectorParams zeros(const DetectorConfig& config);
    /// Seeded uniform(-a,a) with a = sqrt(6/(fan_in+fan_out)); layer-norm
    /// gains 1, biases 0.
    static DetectorParams init(const DetectorConfig& config);

    std::size_t block_offset(int global_block) const;
    std::size_t head_offset() const;
    bool shape_matches(const DetectorConfig& config) const;
};

std::size_t param_count(const DetectorConfig& config);
std::size_t params_per_block(int width);

/// Content-stable serialization order: cells from bbox-normalized positions
/// at 2^bits resolution, axes permuted by axis_order, rows ordered by Z-order
/// code with ties kept in input order.
std::vector<std::uint32_t> serialize_scene(std::span<const double> positions, std::int64_t count,
                                           AxisOrder order, int bits);

struct PoolResult {
    FeatureMatrix features;              // [G,D] group means
    std::vector<double> positions;       // [G,3] group centroids
    std::vector<std::uint32_t> group_of; // [N] row -> group
    std::vector<std::int64_t> group_sizes;
};

/// Groups rows by the leading 3*prefix_bits bits of their Z-order code at
/// serialize_bits resolution; one scene at a time.
PoolResult grid_pool(const FeatureMatrix& features, std::span<const double> positions,
                     int prefix_bits, int serialize_bits);

/// Broadcast each group's pooled row onto its members, added to the skip path.
FeatureMatrix grid_unpool(const FeatureMatrix& pooled, std::span<const std::uint32_t> group_of,
                          const FeatureMatrix& skip);

FeatureMatrix scene_mean_pool(const FeatureMatrix& features,
                              std::span<const std::int64_t> scene_offsets);

/// One pre-LN attention + feed-forward block applied over windows of the
/// given serialized order. Standalone single-scene entry point; the batch
/// forward drives the same kernel per scene.
FeatureMatrix window_attention(const DetectorParams& params, int global_block,
                               const FeatureMatrix& features,
                               std::span<const std::uint32_t> order, int window, int heads);

std::vector<double> forward(const PackedBatch& batch, const DetectorParams& params,
                            const DetectorConfig& config);

struct BceResult {
    double loss = 0.0;
    std::vector<double> dlogits;
};

/// Mean binary cross-entropy with logits in the overflow-guarded form
/// max(z,0) - z*y + log1p(exp(-|z|)).
BceResult bce_loss(std::span<const double> logits, std::span<const int> labels);

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;     // same layout as DetectorParams::values
    std::vector<double> logits;   // per-scene logits from the forward pass
};

LossGrad loss_and_gradient(const PackedBatch& batch, const DetectorParams& params,
                           const DetectorConfig& config);

/// Central-difference verification over `probes` seeded parameter picks;
/// returns max |g_a-g_n|/(|g_a|+|g_n|+1e-12). With corrupt_one set, the
/// probed entry with the largest analytic gradient is doubled first, which a
/// healthy check must flag.
double grad_check(const PackedBatch& batch, const DetectorParams& params,
                  const DetectorConfig& config, int probes, double eps, bool corrupt_one = false);

/// One scene prepared for training/inference.
struct SceneExample {
    std::string id;
    FeatureMatrix features;
    std::vector<double> positions;
    int label = 0;
};

SceneExample make_example(const RawScene& raw, const DetectorConfig& config,
                          const NormalizationSpec& norm, int label, std::string id = {});

PackedBatch pack_batch(std::span<const SceneExample* const> scenes);

struct TrainMetrics {
    double loss = 0.0;
    double accuracy = 0.0;
};

struct Checkpoint {
    DetectorConfig config;
    NormalizationSpec norm;
    DetectorParams params;
    int epoch = 0;
    TrainMetrics metrics;
};

using EpochCallback = std::function<void(int epoch, const TrainMetrics&)>;

/// Adam training over seeded shuffled batches; deterministic per seed on a
/// single thread. Requires both classes in the training set.
Checkpoint train(std::span<const SceneExample> train_set, const DetectorConfig& config,
                 const NormalizationSpec& norm, const EpochCallback& on_epoch = {});

struct Prediction {
    double score = 0.0; // sigmoid(logit)
    Label label = Label::real;
};

/// score > 0.5 reads fake; an exact 0.5 tie stays real.
Prediction predict(const Checkpoint& checkpoint, const RawScene& scene);

/// Checkpoint container: "F3DD" magic, format version, JSON metadata block,
/// then the raw little-endian float32 parameter tensors in declaration order.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace f3dgs
