// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#include "f3dgs/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "f3dgs/morton.hpp"
#include "f3dgs/rng.hpp"

namespace f3dgs {

using nlohmann::json;

void DetectorConfig::validate() const {
    if (width < 1) raise(ErrorKind::OutOfRange, "model width must be >= 1");
    if (heads < 1 || width % heads != 0)
        raise(ErrorKind::OutOfRange, "width must be divisible by heads");
    if (window < 2) raise(ErrorKind::OutOfRange, "attention window must be >= 2");
    if (encoder_blocks < 0 || pooled_blocks < 0 || decoder_blocks < 0)
        raise(ErrorKind::OutOfRange, "block counts must be >= 0");
    if (serialize_bits < 1 || serialize_bits > kMaxMortonBits)
        raise(ErrorKind::OutOfRange, "serialize_bits must lie in [1,21]");
    if (pool_prefix_bits < 1 || pool_prefix_bits > serialize_bits)
        raise(ErrorKind::OutOfRange, "pool_prefix_bits must lie in [1,serialize_bits]");
    if (batch_scenes < 1) raise(ErrorKind::OutOfRange, "batch_scenes must be >= 1");
    if (epochs < 0) raise(ErrorKind::OutOfRange, "epochs must be >= 0");
    if (sh_degree < 0) raise(ErrorKind::OutOfRange, "sh_degree must be >= 0");
    if (!mask.any()) raise(ErrorKind::EmptyMask, "feature mask enables no groups");
}

// ---------------------------------------------------------------------------
// parameter layout

std::size_t params_per_block(int width) {
    const std::size_t d = static_cast<std::size_t>(width);
    const std::size_t hidden = 4 * d;
    // ln1 (2d) + q/k/v/o projections (4*(d*d+d)) + ln2 (2d) + ffn
    return 2 * d + 4 * (d * d + d) + 2 * d + (d * hidden + hidden) + (hidden * d + d);
}

std::size_t param_count(const DetectorConfig& config) {
    const std::size_t f = static_cast<std::size_t>(config.feature_dim());
    const std::size_t d = static_cast<std::size_t>(config.width);
    return f * d + d + static_cast<std::size_t>(config.total_blocks()) * params_per_block(config.width) +
           d + 1;
}

std::size_t DetectorParams::block_offset(int global_block) const {
    const std::size_t f = static_cast<std::size_t>(feature_dim);
    const std::size_t d = static_cast<std::size_t>(width);
    return f * d + d + static_cast<std::size_t>(global_block) * params_per_block(width);
}

std::size_t DetectorParams::head_offset() const {
    return block_offset(encoder_blocks + pooled_blocks + decoder_blocks);
}

bool DetectorParams::shape_matches(const DetectorConfig& config) const {
    return feature_dim == config.feature_dim() && width == config.width &&
           encoder_blocks == config.encoder_blocks && pooled_blocks == config.pooled_blocks &&
           decoder_blocks == config.decoder_blocks && values.size() == param_count(config);
}

DetectorParams DetectorParams::zeros(const DetectorConfig& config) {
    config.validate();
    DetectorParams p;
    p.feature_dim = config.feature_dim();
    p.width = config.width;
    p.encoder_blocks = config.encoder_blocks;
    p.pooled_blocks = config.pooled_blocks;
    p.decoder_blocks = config.decoder_blocks;
    p.values.assign(param_count(config), 0.0);
    return p;
}

namespace {

template <typename T>
struct BlockViewT {
    T* ln1_g;
    T* ln1_b;
    T* wq;
    T* bq;
    T* wk;
    T* bk;
    T* wv;
    T* bv;
    T* wo;
    T* bo;
    T* ln2_g;
    T* ln2_b;
    T* w1;
    T* b1;
    T* w2;
    T* b2;
};

template <typename T>
BlockViewT<T> make_block_view(T* base, int width) {
    const std::size_t d = static_cast<std::size_t>(width);
    const std::size_t hidden = 4 * d;
    BlockViewT<T> v{};
    T* p = base;
    v.ln1_g = p; p += d;
    v.ln1_b = p; p += d;
    v.wq = p; p += d * d;
    v.bq = p; p += d;
    v.wk = p; p += d * d;
    v.bk = p; p += d;
    v.wv = p; p += d * d;
    v.bv = p; p += d;
    v.wo = p; p += d * d;
    v.bo = p; p += d;
    v.ln2_g = p; p += d;
    v.ln2_b = p; p += d;
    v.w1 = p; p += d * hidden;
    v.b1 = p; p += hidden;
    v.w2 = p; p += hidden * d;
    v.b2 = p; p += d;
    return v;
}

using BlockView = BlockViewT<const double>;
using BlockGrad = BlockViewT<double>;

void xavier_fill(double* w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) w[i] = rng.uniform(-a, a);
}

} // namespace

DetectorParams DetectorParams::init(const DetectorConfig& config) {
    DetectorParams p = zeros(config);
    const std::size_t f = static_cast<std::size_t>(p.feature_dim);
    const std::size_t d = static_cast<std::size_t>(p.width);
    Rng rng(config.seed);

    xavier_fill(p.values.data(), f, d, rng); // embed weight; embed bias stays 0
    for (int b = 0; b < config.total_blocks(); ++b) {
        BlockGrad v = make_block_view(p.values.data() + p.block_offset(b), p.width);
        std::fill(v.ln1_g, v.ln1_g + d, 1.0);
        xavier_fill(v.wq, d, d, rng);
        xavier_fill(v.wk, d, d, rng);
        xavier_fill(v.wv, d, d, rng);
        xavier_fill(v.wo, d, d, rng);
        std::fill(v.ln2_g, v.ln2_g + d, 1.0);
        xavier_fill(v.w1, d, 4 * d, rng);
        xavier_fill(v.w2, 4 * d, d, rng);
    }
    xavier_fill(p.values.data() + p.head_offset(), d, 1, rng);
    return p;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

std::vector<std::array<std::uint32_t, 3>> position_cells(std::span<const double> positions,
                                                         std::int64_t count, int bits) {
    std::array<double, 3> lo{}, hi{};
    for (int k = 0; k < 3; ++k) lo[k] = hi[k] = positions[static_cast<std::size_t>(k)];
    for (std::int64_t i = 0; i < count; ++i)
        for (int k = 0; k < 3; ++k) {
            double v = positions[static_cast<std::size_t>(i * 3 + k)];
            lo[k] = std::min(lo[k], v);
            hi[k] = std::max(hi[k], v);
        }
    const std::uint32_t cells = 1u << bits;
    std::vector<std::array<std::uint32_t, 3>> out(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        for (int k = 0; k < 3; ++k) {
            double span_k = hi[k] - lo[k];
            double t = span_k > 0.0 ? (positions[static_cast<std::size_t>(i * 3 + k)] - lo[k]) / span_k : 0.0;
            auto c = static_cast<std::uint32_t>(t * static_cast<double>(cells));
            out[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = std::min(c, cells - 1);
        }
    }
    return out;
}

std::uint64_t axis_morton(const std::array<std::uint32_t, 3>& cell, AxisOrder order, int bits) {
    switch (order) {
    case AxisOrder::xyz: return morton_code({cell[0], cell[1], cell[2]}, bits);
    case AxisOrder::yzx: return morton_code({cell[1], cell[2], cell[0]}, bits);
    case AxisOrder::zxy: return morton_code({cell[2], cell[0], cell[1]}, bits);
    }
    return 0;
}

// stable Z-order sort with an explicit secondary tie key
std::vector<std::uint32_t> serialize_with_ties(std::span<const double> positions,
                                               std::int64_t count, AxisOrder order, int bits,
                                               std::span<const std::uint64_t> ties) {
    auto cells = position_cells(positions, count, bits);
    std::vector<std::uint64_t> keys(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i)
        keys[static_cast<std::size_t>(i)] = axis_morton(cells[static_cast<std::size_t>(i)], order, bits);
    std::vector<std::uint32_t> perm(static_cast<std::size_t>(count));
    std::iota(perm.begin(), perm.end(), 0u);
    std::stable_sort(perm.begin(), perm.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (keys[a] != keys[b]) return keys[a] < keys[b];
        if (!ties.empty() && ties[a] != ties[b]) return ties[a] < ties[b];
        return false;
    });
    return perm;
}

} // namespace

std::vector<std::uint32_t> serialize_scene(std::span<const double> positions, std::int64_t count,
                                           AxisOrder order, int bits) {
    if (count < 1) raise(ErrorKind::EmptyScene, "cannot serialize an empty scene");
    if (positions.size() != static_cast<std::size_t>(count) * 3)
        raise(ErrorKind::ShapeMismatch, "positions must be [N,3]");
    return serialize_with_ties(positions, count, order, bits, {});
}

// ---------------------------------------------------------------------------
// dense kernels

namespace {

// c[m,n] += a[m,k] * b[k,n]
void matmul_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// da[m,k] += dc[m,n] * b[k,n]^T
void matmul_bt_acc(const double* dc, const double* b, double* da, std::int64_t m, std::int64_t k,
                   std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* dcrow = dc + i * n;
        double* darow = da + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double s = 0.0;
            for (std::int64_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
            darow[p] += s;
        }
    }
}

// db[k,n] += a[m,k]^T * dc[m,n]
void matmul_at_acc(const double* a, const double* dc, double* db, std::int64_t m, std::int64_t k,
                   std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* dcrow = dc + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            double* dbrow = db + p * n;
            for (std::int64_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
        }
    }
}

void add_bias_rows(double* x, const double* bias, std::int64_t m, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) x[i * n + j] += bias[j];
}

constexpr double kLnEps = 1e-5;

void layer_norm_forward(const double* x, const double* gain, const double* bias, double* y,
                        double* mu_out, double* istd_out, std::int64_t m, std::int64_t d) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* row = x + i * d;
        double mu = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            double t = row[j] - mu;
            var += t * t;
        }
        var /= static_cast<double>(d);
        double istd = 1.0 / std::sqrt(var + kLnEps);
        mu_out[i] = mu;
        istd_out[i] = istd;
        double* yrow = y + i * d;
        for (std::int64_t j = 0; j < d; ++j) yrow[j] = gain[j] * (row[j] - mu) * istd + bias[j];
    }
}

// accumulates dx; dgain/dbias accumulate into the parameter gradient
void layer_norm_backward(const double* x, const double* gain, const double* mu,
                         const double* istd, const double* dy, double* dx, double* dgain,
                         double* dbias, std::int64_t m, std::int64_t d) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* row = x + i * d;
        const double* dyrow = dy + i * d;
        double* dxrow = dx + i * d;
        double m1 = 0.0, m2 = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            double xhat = (row[j] - mu[i]) * istd[i];
            double dxhat = dyrow[j] * gain[j];
            dgain[j] += dyrow[j] * xhat;
            dbias[j] += dyrow[j];
            m1 += dxhat;
            m2 += dxhat * xhat;
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::int64_t j = 0; j < d; ++j) {
            double xhat = (row[j] - mu[i]) * istd[i];
            double dxhat = dyrow[j] * gain[j];
            dxrow[j] += istd[i] * (dxhat - m1 - xhat * m2);
        }
    }
}

double gelu_exact(double u) { return 0.5 * u * (1.0 + std::erf(u / std::numbers::sqrt2)); }

double gelu_deriv(double u) {
    double phi_cdf = 0.5 * (1.0 + std::erf(u / std::numbers::sqrt2));
    double phi_pdf = std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
    return phi_cdf + u * phi_pdf;
}

struct WindowSpan {
    std::int64_t begin = 0;
    std::int64_t end = 0;
};

std::vector<WindowSpan> build_windows(std::span<const std::int64_t> offsets, int window) {
    std::vector<WindowSpan> spans;
    for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
        for (std::int64_t t = offsets[b]; t < offsets[b + 1]; t += window)
            spans.push_back({t, std::min<std::int64_t>(t + window, offsets[b + 1])});
    }
    return spans;
}

struct BlockTape {
    std::vector<double> x_in;
    std::vector<double> ln1_mu, ln1_istd;
    std::vector<double> a, q, k, v;
    std::vector<double> probs;
    std::vector<std::size_t> prob_offsets; // per window
    std::vector<double> ctx;
    std::vector<double> x_mid;
    std::vector<double> ln2_mu, ln2_istd;
    std::vector<double> f, u, g;
};

void check_finite(const std::vector<double>& x, int global_block) {
    for (double v : x)
        if (!std::isfinite(v))
            raise(ErrorKind::NonFiniteActivation,
                  "non-finite activation in block " + std::to_string(global_block));
}

// pre-LN attention + feed-forward with residuals; x is [m,d] and updated in
// place. Rows are touched only through `order` within each window, so a
// window never mixes scenes.
void block_forward(const BlockView& p, int d_i, int heads, std::vector<double>& x,
                   std::int64_t m, std::span<const std::uint32_t> order,
                   std::span<const WindowSpan> windows, BlockTape& tape, int global_block) {
    const std::int64_t d = d_i;
    const std::int64_t dh = d / heads;
    const std::int64_t hidden = 4 * d;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::size_t md = static_cast<std::size_t>(m * d);

    tape.x_in = x;
    tape.ln1_mu.resize(static_cast<std::size_t>(m));
    tape.ln1_istd.resize(static_cast<std::size_t>(m));
    tape.a.assign(md, 0.0);
    layer_norm_forward(x.data(), p.ln1_g, p.ln1_b, tape.a.data(), tape.ln1_mu.data(),
                       tape.ln1_istd.data(), m, d);

    tape.q.assign(md, 0.0);
    tape.k.assign(md, 0.0);
    tape.v.assign(md, 0.0);
    matmul_acc(tape.a.data(), p.wq, tape.q.data(), m, d, d);
    matmul_acc(tape.a.data(), p.wk, tape.k.data(), m, d, d);
    matmul_acc(tape.a.data(), p.wv, tape.v.data(), m, d, d);
    add_bias_rows(tape.q.data(), p.bq, m, d);
    add_bias_rows(tape.k.data(), p.bk, m, d);
    add_bias_rows(tape.v.data(), p.bv, m, d);

    tape.ctx.assign(md, 0.0);
    tape.prob_offsets.assign(windows.size(), 0);
    std::size_t prob_total = 0;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        tape.prob_offsets[w] = prob_total;
        std::size_t n = static_cast<std::size_t>(windows[w].end - windows[w].begin);
        prob_total += static_cast<std::size_t>(heads) * n * n;
    }
    tape.probs.assign(prob_total, 0.0);

    std::vector<double> scores;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const std::int64_t n = windows[w].end - windows[w].begin;
        const std::uint32_t* rows = order.data() + windows[w].begin;
        scores.resize(static_cast<std::size_t>(n));
        for (int h = 0; h < heads; ++h) {
            double* probs = tape.probs.data() + tape.prob_offsets[w] +
                            static_cast<std::size_t>(h) * static_cast<std::size_t>(n * n);
            for (std::int64_t i = 0; i < n; ++i) {
                const double* qi = tape.q.data() + static_cast<std::size_t>(rows[i]) * d + h * dh;
                double max_s = -std::numeric_limits<double>::infinity();
                for (std::int64_t j = 0; j < n; ++j) {
                    const double* kj = tape.k.data() + static_cast<std::size_t>(rows[j]) * d + h * dh;
                    double s = 0.0;
                    for (std::int64_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
                    s *= inv_sqrt_dh;
                    scores[static_cast<std::size_t>(j)] = s;
                    max_s = std::max(max_s, s);
                }
                double denom = 0.0;
                for (std::int64_t j = 0; j < n; ++j) {
                    double e = std::exp(scores[static_cast<std::size_t>(j)] - max_s);
                    probs[i * n + j] = e;
                    denom += e;
                }
                double inv = 1.0 / denom;
                double* ci = tape.ctx.data() + static_cast<std::size_t>(rows[i]) * d + h * dh;
                for (std::int64_t j = 0; j < n; ++j) {
                    double pij = probs[i * n + j] * inv;
                    probs[i * n + j] = pij;
                    const double* vj = tape.v.data() + static_cast<std::size_t>(rows[j]) * d + h * dh;
                    for (std::int64_t t = 0; t < dh; ++t) ci[t] += pij * vj[t];
                }
            }
        }
    }

    // attention output projection + residual
    std::vector<double> proj(md, 0.0);
    matmul_acc(tape.ctx.data(), p.wo, proj.data(), m, d, d);
    add_bias_rows(proj.data(), p.bo, m, d);
    for (std::size_t i = 0; i < md; ++i) x[i] += proj[i];
    tape.x_mid = x;

    tape.ln2_mu.resize(static_cast<std::size_t>(m));
    tape.ln2_istd.resize(static_cast<std::size_t>(m));
    tape.f.assign(md, 0.0);
    layer_norm_forward(x.data(), p.ln2_g, p.ln2_b, tape.f.data(), tape.ln2_mu.data(),
                       tape.ln2_istd.data(), m, d);

    tape.u.assign(static_cast<std::size_t>(m * hidden), 0.0);
    matmul_acc(tape.f.data(), p.w1, tape.u.data(), m, d, hidden);
    add_bias_rows(tape.u.data(), p.b1, m, hidden);
    tape.g.resize(tape.u.size());
    for (std::size_t i = 0; i < tape.u.size(); ++i) tape.g[i] = gelu_exact(tape.u[i]);

    std::vector<double> ffn(md, 0.0);
    matmul_acc(tape.g.data(), p.w2, ffn.data(), m, hidden, d);
    add_bias_rows(ffn.data(), p.b2, m, d);
    for (std::size_t i = 0; i < md; ++i) x[i] += ffn[i];

    check_finite(x, global_block);
}

// dx arrives as the gradient at the block output and leaves as the gradient
// at the block input; parameter gradients accumulate into `g`.
void block_backward(const BlockView& p, const BlockGrad& g, int d_i, int heads,
                    const BlockTape& tape, std::vector<double>& dx, std::int64_t m,
                    std::span<const std::uint32_t> order, std::span<const WindowSpan> windows) {
    const std::int64_t d = d_i;
    const std::int64_t dh = d / heads;
    const std::int64_t hidden = 4 * d;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::size_t md = static_cast<std::size_t>(m * d);

    // feed-forward path: x_out = x_mid + W2 gelu(W1 ln2(x_mid) + b1) + b2
    std::vector<double> du(static_cast<std::size_t>(m * hidden), 0.0);
    {
        const std::vector<double>& do2 = dx; // gradient at the ffn output
        for (std::int64_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::int64_t i = 0; i < m; ++i) s += do2[static_cast<std::size_t>(i * d + j)];
            g.b2[j] += s;
        }
        matmul_at_acc(tape.g.data(), do2.data(), g.w2, m, hidden, d);
        std::vector<double> dg(static_cast<std::size_t>(m * hidden), 0.0);
        matmul_bt_acc(do2.data(), p.w2, dg.data(), m, hidden, d);
        for (std::size_t i = 0; i < dg.size(); ++i) du[i] = dg[i] * gelu_deriv(tape.u[i]);
    }
    for (std::int64_t j = 0; j < hidden; ++j) {
        double s = 0.0;
        for (std::int64_t i = 0; i < m; ++i) s += du[static_cast<std::size_t>(i * hidden + j)];
        g.b1[j] += s;
    }
    matmul_at_acc(tape.f.data(), du.data(), g.w1, m, d, hidden);
    std::vector<double> df(md, 0.0);
    matmul_bt_acc(du.data(), p.w1, df.data(), m, d, hidden);
    // residual passthrough: dx already holds the identity branch
    layer_norm_backward(tape.x_mid.data(), p.ln2_g, tape.ln2_mu.data(), tape.ln2_istd.data(),
                        df.data(), dx.data(), g.ln2_g, g.ln2_b, m, d);

    // attention path: x_mid = x_in + Wo ctx + bo
    std::vector<double> dctx(md, 0.0);
    {
        const std::vector<double>& dproj = dx;
        for (std::int64_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::int64_t i = 0; i < m; ++i) s += dproj[static_cast<std::size_t>(i * d + j)];
            g.bo[j] += s;
        }
        matmul_at_acc(tape.ctx.data(), dproj.data(), g.wo, m, d, d);
        matmul_bt_acc(dproj.data(), p.wo, dctx.data(), m, d, d);
    }

    std::vector<double> dq(md, 0.0), dk(md, 0.0), dv(md, 0.0);
    std::vector<double> dp_row, ds_row;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const std::int64_t n = windows[w].end - windows[w].begin;
        const std::uint32_t* rows = order.data() + windows[w].begin;
        dp_row.resize(static_cast<std::size_t>(n));
        ds_row.resize(static_cast<std::size_t>(n));
        for (int h = 0; h < heads; ++h) {
            const double* probs = tape.probs.data() + tape.prob_offsets[w] +
                                  static_cast<std::size_t>(h) * static_cast<std::size_t>(n * n);
            for (std::int64_t i = 0; i < n; ++i) {
                const double* dci = dctx.data() + static_cast<std::size_t>(rows[i]) * d + h * dh;
                double dot = 0.0;
                for (std::int64_t j = 0; j < n; ++j) {
                    const double* vj = tape.v.data() + static_cast<std::size_t>(rows[j]) * d + h * dh;
                    double s = 0.0;
                    for (std::int64_t t = 0; t < dh; ++t) s += dci[t] * vj[t];
                    dp_row[static_cast<std::size_t>(j)] = s;
                    dot += s * probs[i * n + j];
                    double* dvj = dv.data() + static_cast<std::size_t>(rows[j]) * d + h * dh;
                    double pij = probs[i * n + j];
                    for (std::int64_t t = 0; t < dh; ++t) dvj[t] += pij * dci[t];
                }
                for (std::int64_t j = 0; j < n; ++j)
                    ds_row[static_cast<std::size_t>(j)] =
                        probs[i * n + j] * (dp_row[static_cast<std::size_t>(j)] - dot);
                double* dqi = dq.data() + static_cast<std::size_t>(rows[i]) * d + h * dh;
                const double* qi = tape.q.data() + static_cast<std::size_t>(rows[i]) * d + h * dh;
                for (std::int64_t j = 0; j < n; ++j) {
                    double dsij = ds_row[static_cast<std::size_t>(j)] * inv_sqrt_dh;
                    const double* kj = tape.k.data() + static_cast<std::size_t>(rows[j]) * d + h * dh;
                    double* dkj = dk.data() + static_cast<std::size_t>(rows[j]) * d + h * dh;
                    for (std::int64_t t = 0; t < dh; ++t) {
                        dqi[t] += dsij * kj[t];
                        dkj[t] += dsij * qi[t];
                    }
                }
            }
        }
    }

    for (std::int64_t j = 0; j < d; ++j) {
        double sq = 0.0, sk = 0.0, sv = 0.0;
        for (std::int64_t i = 0; i < m; ++i) {
            sq += dq[static_cast<std::size_t>(i * d + j)];
            sk += dk[static_cast<std::size_t>(i * d + j)];
            sv += dv[static_cast<std::size_t>(i * d + j)];
        }
        g.bq[j] += sq;
        g.bk[j] += sk;
        g.bv[j] += sv;
    }
    matmul_at_acc(tape.a.data(), dq.data(), g.wq, m, d, d);
    matmul_at_acc(tape.a.data(), dk.data(), g.wk, m, d, d);
    matmul_at_acc(tape.a.data(), dv.data(), g.wv, m, d, d);
    std::vector<double> da(md, 0.0);
    matmul_bt_acc(dq.data(), p.wq, da.data(), m, d, d);
    matmul_bt_acc(dk.data(), p.wk, da.data(), m, d, d);
    matmul_bt_acc(dv.data(), p.wv, da.data(), m, d, d);
    layer_norm_backward(tape.x_in.data(), p.ln1_g, tape.ln1_mu.data(), tape.ln1_istd.data(),
                        da.data(), dx.data(), g.ln1_g, g.ln1_b, m, d);
}

} // namespace

// ---------------------------------------------------------------------------
// standalone building blocks

FeatureMatrix window_attention(const DetectorParams& params, int global_block,
                               const FeatureMatrix& features,
                               std::span<const std::uint32_t> order, int window, int heads) {
    if (features.cols != params.width)
        raise(ErrorKind::ShapeMismatch, "feature width does not match model width");
    if (order.size() != static_cast<std::size_t>(features.rows))
        raise(ErrorKind::ShapeMismatch, "order length does not match row count");
    BlockView view = make_block_view(params.values.data() + params.block_offset(global_block),
                                     params.width);
    std::vector<double> x = features.data;
    std::vector<std::int64_t> offsets = {0, features.rows};
    std::vector<WindowSpan> windows = build_windows(offsets, window);
    BlockTape tape;
    block_forward(view, params.width, heads, x, features.rows, order, windows, tape, global_block);
    FeatureMatrix out;
    out.rows = features.rows;
    out.cols = features.cols;
    out.data = std::move(x);
    return out;
}

PoolResult grid_pool(const FeatureMatrix& features, std::span<const double> positions,
                     int prefix_bits, int serialize_bits) {
    const std::int64_t n = features.rows;
    if (n < 1) raise(ErrorKind::EmptyScene, "cannot pool an empty scene");
    if (positions.size() != static_cast<std::size_t>(n) * 3)
        raise(ErrorKind::ShapeMismatch, "positions must be [N,3]");
    if (prefix_bits < 1 || prefix_bits > serialize_bits)
        raise(ErrorKind::OutOfRange, "prefix_bits must lie in [1,serialize_bits]");

    // content-stable canonical order, grouped by the coarse Z-order prefix
    std::vector<std::uint64_t> ties(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        std::uint64_t h = fnv1a64(features.row(i), static_cast<std::size_t>(features.cols) * sizeof(double));
        ties[static_cast<std::size_t>(i)] =
            fnv1a64(positions.data() + i * 3, 3 * sizeof(double), h);
    }
    std::vector<std::uint32_t> canon = serialize_with_ties(positions, n, AxisOrder::xyz,
                                                           serialize_bits, ties);
    auto cells = position_cells(positions, n, serialize_bits);
    const int shift = 3 * (serialize_bits - prefix_bits);

    PoolResult out;
    out.group_of.assign(static_cast<std::size_t>(n), 0);
    const int d = features.cols;
    std::vector<double> sums;
    std::uint64_t current_key = 0;
    std::int64_t group = -1;
    for (std::int64_t t = 0; t < n; ++t) {
        std::uint32_t row = canon[static_cast<std::size_t>(t)];
        std::uint64_t key = axis_morton(cells[row], AxisOrder::xyz, serialize_bits) >> shift;
        if (group < 0 || key != current_key) {
            ++group;
            current_key = key;
            out.group_sizes.push_back(0);
            out.features.data.insert(out.features.data.end(), static_cast<std::size_t>(d), 0.0);
            out.positions.insert(out.positions.end(), 3, 0.0);
        }
        out.group_of[row] = static_cast<std::uint32_t>(group);
        out.group_sizes.back() += 1;
        double* acc = out.features.data.data() + group * d;
        const double* src = features.row(row);
        for (int c = 0; c < d; ++c) acc[c] += src[c];
        for (int c = 0; c < 3; ++c)
            out.positions[static_cast<std::size_t>(group * 3 + c)] += positions[row * 3 + c];
    }
    out.features.rows = group + 1;
    out.features.cols = d;
    for (std::int64_t gi = 0; gi <= group; ++gi) {
        double inv = 1.0 / static_cast<double>(out.group_sizes[static_cast<std::size_t>(gi)]);
        for (int c = 0; c < d; ++c) out.features.data[static_cast<std::size_t>(gi * d + c)] *= inv;
        for (int c = 0; c < 3; ++c) out.positions[static_cast<std::size_t>(gi * 3 + c)] *= inv;
    }
    return out;
}

FeatureMatrix grid_unpool(const FeatureMatrix& pooled, std::span<const std::uint32_t> group_of,
                          const FeatureMatrix& skip) {
    if (skip.rows != static_cast<std::int64_t>(group_of.size()))
        raise(ErrorKind::GroupMapMismatch, "group map length does not match the skip rows");
    if (pooled.cols != skip.cols)
        raise(ErrorKind::GroupMapMismatch, "pooled and skip widths differ");
    FeatureMatrix out;
    out.rows = skip.rows;
    out.cols = skip.cols;
    out.data.resize(skip.data.size());
    for (std::int64_t i = 0; i < skip.rows; ++i) {
        std::uint32_t gi = group_of[static_cast<std::size_t>(i)];
        if (gi >= pooled.rows)
            raise(ErrorKind::GroupMapMismatch,
                  "group index " + std::to_string(gi) + " exceeds pooled rows");
        const double* p = pooled.row(gi);
        const double* s = skip.row(i);
        double* o = out.row(i);
        for (int c = 0; c < out.cols; ++c) o[c] = s[c] + p[c];
    }
    return out;
}

FeatureMatrix scene_mean_pool(const FeatureMatrix& features,
                              std::span<const std::int64_t> scene_offsets) {
    if (scene_offsets.size() < 2 || scene_offsets.front() != 0 ||
        scene_offsets.back() != features.rows)
        raise(ErrorKind::ShapeMismatch, "scene offsets must span [0,M]");
    const std::int64_t b_count = static_cast<std::int64_t>(scene_offsets.size()) - 1;
    FeatureMatrix out;
    out.rows = b_count;
    out.cols = features.cols;
    out.data.assign(static_cast<std::size_t>(b_count) * features.cols, 0.0);
    for (std::int64_t b = 0; b < b_count; ++b) {
        std::int64_t lo = scene_offsets[static_cast<std::size_t>(b)];
        std::int64_t hi = scene_offsets[static_cast<std::size_t>(b) + 1];
        if (hi <= lo) raise(ErrorKind::EmptyScene, "scene " + std::to_string(b) + " has no rows");
        double* acc = out.row(b);
        for (std::int64_t i = lo; i < hi; ++i) {
            const double* src = features.row(i);
            for (int c = 0; c < features.cols; ++c) acc[c] += src[c];
        }
        double inv = 1.0 / static_cast<double>(hi - lo);
        for (int c = 0; c < features.cols; ++c) acc[c] *= inv;
    }
    return out;
}

BceResult bce_loss(std::span<const double> logits, std::span<const int> labels) {
    if (logits.size() != labels.size() || logits.empty())
        raise(ErrorKind::ShapeMismatch, "logits and labels must match and be non-empty");
    BceResult r;
    r.dlogits.resize(logits.size());
    const double inv_b = 1.0 / static_cast<double>(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            raise(ErrorKind::OutOfRange, "labels must be 0 or 1");
        double z = logits[i];
        double y = static_cast<double>(labels[i]);
        r.loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        double sig = 1.0 / (1.0 + std::exp(-z));
        r.dlogits[i] = (sig - y) * inv_b;
    }
    r.loss *= inv_b;
    return r;
}

// ---------------------------------------------------------------------------
// full model

namespace {

constexpr std::array<AxisOrder, 3> kAxisCycle = {AxisOrder::xyz, AxisOrder::yzx, AxisOrder::zxy};

struct LevelGeometry {
    std::int64_t rows = 0;
    std::vector<std::int64_t> offsets;
    std::array<std::vector<std::uint32_t>, 3> orders; // one per axis order
    std::array<std::vector<WindowSpan>, 3> windows;
    std::vector<std::uint32_t> canon; // alias of orders[xyz]
};

LevelGeometry build_geometry(std::span<const double> positions,
                             std::span<const std::int64_t> offsets,
                             std::span<const std::uint64_t> ties, int bits, int window,
                             const std::array<bool, 3>& used) {
    LevelGeometry geo;
    geo.rows = offsets.back();
    geo.offsets.assign(offsets.begin(), offsets.end());
    for (int o = 0; o < 3; ++o) {
        if (!used[static_cast<std::size_t>(o)] && o != 0) continue; // xyz always built (canon)
        std::vector<std::uint32_t>& order = geo.orders[static_cast<std::size_t>(o)];
        order.resize(static_cast<std::size_t>(geo.rows));
        for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
            std::int64_t lo = offsets[b], hi = offsets[b + 1];
            std::span<const double> pos(positions.data() + lo * 3,
                                        static_cast<std::size_t>(hi - lo) * 3);
            std::span<const std::uint64_t> tie =
                ties.empty() ? ties : ties.subspan(static_cast<std::size_t>(lo),
                                                   static_cast<std::size_t>(hi - lo));
            std::vector<std::uint32_t> local = serialize_with_ties(
                pos, hi - lo, kAxisCycle[static_cast<std::size_t>(o)], bits, tie);
            for (std::int64_t t = 0; t < hi - lo; ++t)
                order[static_cast<std::size_t>(lo + t)] = static_cast<std::uint32_t>(lo) + local[static_cast<std::size_t>(t)];
        }
        geo.windows[static_cast<std::size_t>(o)] = build_windows(offsets, window);
    }
    geo.canon = geo.orders[0];
    return geo;
}

struct ForwardTape {
    std::vector<BlockTape> blocks; // indexed by global block
    std::vector<double> skip;      // encoder output [M,D]
    PoolResult pool;               // concatenated over scenes
    std::vector<std::int64_t> pooled_offsets;
    std::vector<double> pooled_in; // pool means, input to the pooled stage
    std::vector<double> dec_out;   // [M,D]
    std::vector<double> scene_pooled;
    std::vector<double> logits;
};

void validate_batch(const PackedBatch& batch, const DetectorConfig& config) {
    if (batch.features.cols != config.feature_dim())
        raise(ErrorKind::MaskMismatch,
              "batch feature width " + std::to_string(batch.features.cols) +
                  " does not match the config width " + std::to_string(config.feature_dim()));
    if (batch.scene_offsets.size() < 2 || batch.scene_offsets.front() != 0)
        raise(ErrorKind::ShapeMismatch, "scene offsets must start at 0");
    for (std::size_t b = 0; b + 1 < batch.scene_offsets.size(); ++b)
        if (batch.scene_offsets[b] >= batch.scene_offsets[b + 1])
            raise(ErrorKind::EmptyScene, "scene " + std::to_string(b) + " has no rows");
    if (batch.scene_offsets.back() != batch.features.rows)
        raise(ErrorKind::ShapeMismatch, "scene offsets must end at the row count");
    if (batch.positions.size() != static_cast<std::size_t>(batch.features.rows) * 3)
        raise(ErrorKind::ShapeMismatch, "positions must be [M,3]");
}

std::vector<double> forward_impl(const PackedBatch& batch, const DetectorParams& params,
                                 const DetectorConfig& config, ForwardTape* tape) {
    config.validate();
    validate_batch(batch, config);
    if (!params.shape_matches(config))
        raise(ErrorKind::ShapeMismatch, "parameter tensor does not match the config");

    const std::int64_t m = batch.features.rows;
    const std::int64_t d = config.width;
    const std::int64_t b_count = batch.scene_count();

    ForwardTape local;
    ForwardTape& t = tape ? *tape : local;
    if (tape) t.blocks.resize(static_cast<std::size_t>(config.total_blocks()));

    // serialization ties from input content keep coincident positions stable
    std::vector<std::uint64_t> ties(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < m; ++i) {
        std::uint64_t h = fnv1a64(batch.features.row(i),
                                  static_cast<std::size_t>(batch.features.cols) * sizeof(double));
        ties[static_cast<std::size_t>(i)] =
            fnv1a64(batch.positions.data() + i * 3, 3 * sizeof(double), h);
    }

    std::array<bool, 3> full_used = {false, false, false};
    for (int bi = 0; bi < config.encoder_blocks; ++bi) full_used[static_cast<std::size_t>(bi % 3)] = true;
    for (int di = 0; di < config.decoder_blocks; ++di) {
        int gi = config.encoder_blocks + config.pooled_blocks + di;
        full_used[static_cast<std::size_t>(gi % 3)] = true;
    }
    LevelGeometry full = build_geometry(batch.positions, batch.scene_offsets, ties,
                                        config.serialize_bits, config.window, full_used);

    // embed
    std::vector<double> x(static_cast<std::size_t>(m * d), 0.0);
    matmul_acc(batch.features.data.data(), params.values.data(), x.data(), m,
               batch.features.cols, d);
    add_bias_rows(x.data(), params.values.data() + static_cast<std::size_t>(batch.features.cols) * d,
                  m, d);
    check_finite(x, -1);

    BlockTape scratch;
    auto run_block = [&](int global_block, std::vector<double>& data, std::int64_t rows,
                         const LevelGeometry& geo) {
        int o = global_block % 3;
        BlockView view = make_block_view(params.values.data() + params.block_offset(global_block),
                                         config.width);
        BlockTape& bt = tape ? t.blocks[static_cast<std::size_t>(global_block)] : scratch;
        block_forward(view, config.width, config.heads, data, rows,
                      geo.orders[static_cast<std::size_t>(o)],
                      geo.windows[static_cast<std::size_t>(o)], bt, global_block);
    };

    for (int bi = 0; bi < config.encoder_blocks; ++bi) run_block(bi, x, m, full);

    // pool per scene on the coarse grid, concatenating groups scene by scene
    t.skip = x;
    FeatureMatrix enc;
    enc.rows = m;
    enc.cols = config.width;
    enc.data = x; // copy: pooling reads, decoder writes
    t.pool = PoolResult{};
    t.pooled_offsets.assign(1, 0);
    std::vector<std::uint64_t> pooled_ties;
    for (std::int64_t b = 0; b < b_count; ++b) {
        std::int64_t lo = batch.scene_offsets[static_cast<std::size_t>(b)];
        std::int64_t hi = batch.scene_offsets[static_cast<std::size_t>(b) + 1];
        FeatureMatrix sub;
        sub.rows = hi - lo;
        sub.cols = config.width;
        sub.data.assign(enc.data.begin() + lo * d, enc.data.begin() + hi * d);
        std::span<const double> pos(batch.positions.data() + lo * 3,
                                    static_cast<std::size_t>(hi - lo) * 3);
        PoolResult pr = grid_pool(sub, pos, config.pool_prefix_bits, config.serialize_bits);
        std::uint32_t group_base = static_cast<std::uint32_t>(t.pool.group_sizes.size());
        for (std::int64_t i = 0; i < sub.rows; ++i)
            t.pool.group_of.push_back(group_base + pr.group_of[static_cast<std::size_t>(i)]);
        for (std::size_t gi = 0; gi < pr.group_sizes.size(); ++gi) {
            t.pool.group_sizes.push_back(pr.group_sizes[gi]);
            pooled_ties.push_back(static_cast<std::uint64_t>(gi));
        }
        t.pool.features.data.insert(t.pool.features.data.end(), pr.features.data.begin(),
                                    pr.features.data.end());
        t.pool.positions.insert(t.pool.positions.end(), pr.positions.begin(), pr.positions.end());
        t.pooled_offsets.push_back(static_cast<std::int64_t>(t.pool.group_sizes.size()));
    }
    t.pool.features.rows = static_cast<std::int64_t>(t.pool.group_sizes.size());
    t.pool.features.cols = config.width;
    t.pooled_in = t.pool.features.data;

    std::array<bool, 3> pooled_used = {false, false, false};
    for (int pi = 0; pi < config.pooled_blocks; ++pi)
        pooled_used[static_cast<std::size_t>((config.encoder_blocks + pi) % 3)] = true;
    LevelGeometry pooled_geo = build_geometry(t.pool.positions, t.pooled_offsets, pooled_ties,
                                              config.serialize_bits, config.window, pooled_used);

    std::vector<double> px = t.pooled_in;
    for (int pi = 0; pi < config.pooled_blocks; ++pi)
        run_block(config.encoder_blocks + pi, px, t.pool.features.rows, pooled_geo);

    // unpool: broadcast the pooled row onto its members, plus the skip path
    for (std::int64_t i = 0; i < m; ++i) {
        std::uint32_t gi = t.pool.group_of[static_cast<std::size_t>(i)];
        const double* pr = px.data() + static_cast<std::size_t>(gi) * d;
        double* row = x.data() + static_cast<std::size_t>(i) * d;
        const double* sk = t.skip.data() + static_cast<std::size_t>(i) * d;
        for (std::int64_t c = 0; c < d; ++c) row[c] = sk[c] + pr[c];
    }

    for (int di = 0; di < config.decoder_blocks; ++di)
        run_block(config.encoder_blocks + config.pooled_blocks + di, x, m, full);
    t.dec_out = x;

    // scene mean pooling in canonical serialized order keeps the forward
    // bitwise invariant to input row permutations
    t.scene_pooled.assign(static_cast<std::size_t>(b_count * d), 0.0);
    for (std::int64_t b = 0; b < b_count; ++b) {
        std::int64_t lo = batch.scene_offsets[static_cast<std::size_t>(b)];
        std::int64_t hi = batch.scene_offsets[static_cast<std::size_t>(b) + 1];
        double* acc = t.scene_pooled.data() + static_cast<std::size_t>(b) * d;
        for (std::int64_t s = lo; s < hi; ++s) {
            const double* row = x.data() + static_cast<std::size_t>(full.canon[static_cast<std::size_t>(s)]) * d;
            for (std::int64_t c = 0; c < d; ++c) acc[c] += row[c];
        }
        double inv = 1.0 / static_cast<double>(hi - lo);
        for (std::int64_t c = 0; c < d; ++c) acc[c] *= inv;
    }

    const double* head_w = params.values.data() + params.head_offset();
    const double head_b = head_w[d];
    std::vector<double> logits(static_cast<std::size_t>(b_count));
    for (std::int64_t b = 0; b < b_count; ++b) {
        double z = head_b;
        const double* row = t.scene_pooled.data() + static_cast<std::size_t>(b) * d;
        for (std::int64_t c = 0; c < d; ++c) z += head_w[c] * row[c];
        if (!std::isfinite(z)) raise(ErrorKind::NonFiniteActivation, "non-finite logit");
        logits[static_cast<std::size_t>(b)] = z;
    }
    t.logits = logits;
    return logits;
}

} // namespace

std::vector<double> forward(const PackedBatch& batch, const DetectorParams& params,
                            const DetectorConfig& config) {
    return forward_impl(batch, params, config, nullptr);
}

LossGrad loss_and_gradient(const PackedBatch& batch, const DetectorParams& params,
                           const DetectorConfig& config) {
    if (batch.labels.size() != static_cast<std::size_t>(batch.scene_count()))
        raise(ErrorKind::ShapeMismatch, "batch labels must cover every scene");

    ForwardTape tape;
    std::vector<double> logits = forward_impl(batch, params, config, &tape);
    BceResult bce = bce_loss(logits, batch.labels);

    const std::int64_t m = batch.features.rows;
    const std::int64_t d = config.width;
    const std::int64_t b_count = batch.scene_count();

    LossGrad out;
    out.loss = bce.loss;
    out.grad.assign(params.values.size(), 0.0);

    // head
    double* head_gw = out.grad.data() + params.head_offset();
    const double* head_w = params.values.data() + params.head_offset();
    std::vector<double> dscene(static_cast<std::size_t>(b_count * d), 0.0);
    for (std::int64_t b = 0; b < b_count; ++b) {
        double dz = bce.dlogits[static_cast<std::size_t>(b)];
        const double* row = tape.scene_pooled.data() + static_cast<std::size_t>(b) * d;
        double* drow = dscene.data() + static_cast<std::size_t>(b) * d;
        for (std::int64_t c = 0; c < d; ++c) {
            head_gw[c] += dz * row[c];
            drow[c] = dz * head_w[c];
        }
        head_gw[d] += dz;
    }

    // scene mean pooling
    std::vector<double> dx(static_cast<std::size_t>(m * d), 0.0);
    for (std::int64_t b = 0; b < b_count; ++b) {
        std::int64_t lo = batch.scene_offsets[static_cast<std::size_t>(b)];
        std::int64_t hi = batch.scene_offsets[static_cast<std::size_t>(b) + 1];
        double inv = 1.0 / static_cast<double>(hi - lo);
        const double* drow = dscene.data() + static_cast<std::size_t>(b) * d;
        for (std::int64_t i = lo; i < hi; ++i) {
            double* dst = dx.data() + static_cast<std::size_t>(i) * d;
            for (std::int64_t c = 0; c < d; ++c) dst[c] += drow[c] * inv;
        }
    }

    // geometry rebuilt exactly as in the forward pass
    std::vector<std::uint64_t> ties(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < m; ++i) {
        std::uint64_t h = fnv1a64(batch.features.row(i),
                                  static_cast<std::size_t>(batch.features.cols) * sizeof(double));
        ties[static_cast<std::size_t>(i)] =
            fnv1a64(batch.positions.data() + i * 3, 3 * sizeof(double), h);
    }
    std::array<bool, 3> all_used = {true, true, true};
    LevelGeometry full = build_geometry(batch.positions, batch.scene_offsets, ties,
                                        config.serialize_bits, config.window, all_used);
    std::vector<std::uint64_t> pooled_ties;
    for (std::int64_t b = 0; b < b_count; ++b) {
        std::int64_t lo = tape.pooled_offsets[static_cast<std::size_t>(b)];
        std::int64_t hi = tape.pooled_offsets[static_cast<std::size_t>(b) + 1];
        for (std::int64_t gi = 0; gi < hi - lo; ++gi)
            pooled_ties.push_back(static_cast<std::uint64_t>(gi));
    }
    LevelGeometry pooled_geo = build_geometry(tape.pool.positions, tape.pooled_offsets,
                                              pooled_ties, config.serialize_bits, config.window,
                                              all_used);

    auto back_block = [&](int global_block, std::vector<double>& grad_x, std::int64_t rows,
                          const LevelGeometry& geo) {
        int o = global_block % 3;
        BlockView view = make_block_view(params.values.data() + params.block_offset(global_block),
                                         config.width);
        BlockGrad gview = make_block_view(out.grad.data() + params.block_offset(global_block),
                                          config.width);
        block_backward(view, gview, config.width, config.heads,
                       tape.blocks[static_cast<std::size_t>(global_block)], grad_x, rows,
                       geo.orders[static_cast<std::size_t>(o)],
                       geo.windows[static_cast<std::size_t>(o)]);
    };

    // decoder blocks
    for (int di = config.decoder_blocks - 1; di >= 0; --di)
        back_block(config.encoder_blocks + config.pooled_blocks + di, dx, m, full);

    // unpool: skip gets the gradient directly, each pooled row collects its members
    const std::int64_t g_count = tape.pool.features.rows;
    std::vector<double> dpx(static_cast<std::size_t>(g_count * d), 0.0);
    for (std::int64_t b = 0; b < b_count; ++b) {
        std::int64_t lo = batch.scene_offsets[static_cast<std::size_t>(b)];
        std::int64_t hi = batch.scene_offsets[static_cast<std::size_t>(b) + 1];
        for (std::int64_t s = lo; s < hi; ++s) {
            std::uint32_t row = full.canon[static_cast<std::size_t>(s)];
            std::uint32_t gi = tape.pool.group_of[row];
            const double* src = dx.data() + static_cast<std::size_t>(row) * d;
            double* dst = dpx.data() + static_cast<std::size_t>(gi) * d;
            for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
        }
    }

    for (int pi = config.pooled_blocks - 1; pi >= 0; --pi)
        back_block(config.encoder_blocks + pi, dpx, g_count, pooled_geo);

    // pool means: dx_skip += dpooled / group_size (on top of the unpool skip grad)
    for (std::int64_t i = 0; i < m; ++i) {
        std::uint32_t gi = tape.pool.group_of[static_cast<std::size_t>(i)];
        double inv = 1.0 / static_cast<double>(tape.pool.group_sizes[gi]);
        const double* src = dpx.data() + static_cast<std::size_t>(gi) * d;
        double* dst = dx.data() + static_cast<std::size_t>(i) * d;
        for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c] * inv;
    }

    for (int bi = config.encoder_blocks - 1; bi >= 0; --bi) back_block(bi, dx, m, full);

    // embed
    matmul_at_acc(batch.features.data.data(), dx.data(), out.grad.data(), m, batch.features.cols, d);
    double* embed_gb = out.grad.data() + static_cast<std::size_t>(batch.features.cols) * d;
    for (std::int64_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::int64_t i = 0; i < m; ++i) s += dx[static_cast<std::size_t>(i * d + j)];
        embed_gb[j] += s;
    }

    out.logits = std::move(logits);
    return out;
}

double grad_check(const PackedBatch& batch, const DetectorParams& params,
                  const DetectorConfig& config, int probes, double eps, bool corrupt_one) {
    LossGrad analytic = loss_and_gradient(batch, params, config);

    const std::size_t total = params.values.size();
    std::vector<std::size_t> picks;
    if (probes >= static_cast<int>(total)) {
        picks.resize(total);
        std::iota(picks.begin(), picks.end(), std::size_t{0});
    } else {
        Rng rng(config.seed ^ 0x67726164636b6bULL);
        std::vector<std::size_t> pool(total);
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        for (int i = 0; i < probes; ++i) {
            std::size_t j = static_cast<std::size_t>(i) +
                            static_cast<std::size_t>(rng.next_below(total - static_cast<std::size_t>(i)));
            std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
            picks.push_back(pool[static_cast<std::size_t>(i)]);
        }
    }

    if (corrupt_one) {
        std::size_t worst = picks.front();
        for (std::size_t idx : picks)
            if (std::abs(analytic.grad[idx]) > std::abs(analytic.grad[worst])) worst = idx;
        analytic.grad[worst] *= 2.0;
    }

    DetectorParams probe = params;
    double max_rel = 0.0;
    for (std::size_t idx : picks) {
        double saved = probe.values[idx];
        probe.values[idx] = saved + eps;
        std::vector<double> lp = forward_impl(batch, probe, config, nullptr);
        double loss_p = bce_loss(lp, batch.labels).loss;
        probe.values[idx] = saved - eps;
        std::vector<double> lm = forward_impl(batch, probe, config, nullptr);
        double loss_m = bce_loss(lm, batch.labels).loss;
        probe.values[idx] = saved;
        double numeric = (loss_p - loss_m) / (2.0 * eps);
        double ga = analytic.grad[idx];
        double rel = std::abs(ga - numeric) / (std::abs(ga) + std::abs(numeric) + 1e-12);
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

// ---------------------------------------------------------------------------
// data preparation, training, prediction

SceneExample make_example(const RawScene& raw, const DetectorConfig& config,
                          const NormalizationSpec& norm, int label, std::string id) {
    if (raw.sh_degree != config.sh_degree)
        raise(ErrorKind::MaskMismatch,
              "scene SH degree " + std::to_string(raw.sh_degree) +
                  " does not match the detector config degree " + std::to_string(config.sh_degree));
    SceneExample ex;
    ex.id = std::move(id);
    ex.label = label;
    if (config.domain == InputDomain::activated) {
        GaussianScene scene = activate(raw);
        ex.features = assemble_features(scene, config.mask, norm);
        ex.positions = scene.position;
    } else {
        ex.features = assemble_features_raw(raw, config.mask, norm);
        ex.positions.resize(raw.position.size());
        for (std::size_t i = 0; i < raw.position.size(); ++i)
            ex.positions[i] = static_cast<double>(raw.position[i]);
    }
    return ex;
}

PackedBatch pack_batch(std::span<const SceneExample* const> scenes) {
    if (scenes.empty()) raise(ErrorKind::EmptyInput, "cannot pack an empty batch");
    PackedBatch batch;
    batch.features.cols = scenes.front()->features.cols;
    batch.scene_offsets.push_back(0);
    for (const SceneExample* ex : scenes) {
        if (ex->features.cols != batch.features.cols)
            raise(ErrorKind::ShapeMismatch, "scenes in a batch must share the feature width");
        batch.features.data.insert(batch.features.data.end(), ex->features.data.begin(),
                                   ex->features.data.end());
        batch.positions.insert(batch.positions.end(), ex->positions.begin(), ex->positions.end());
        batch.features.rows += ex->features.rows;
        batch.scene_offsets.push_back(batch.features.rows);
        batch.labels.push_back(ex->label);
    }
    return batch;
}

Checkpoint train(std::span<const SceneExample> train_set, const DetectorConfig& config,
                 const NormalizationSpec& norm, const EpochCallback& on_epoch) {
    config.validate();
    if (train_set.empty()) raise(ErrorKind::EmptyInput, "training set is empty");
    bool has_real = false, has_fake = false;
    for (const SceneExample& ex : train_set) (ex.label == 1 ? has_fake : has_real) = true;
    if (!has_real || !has_fake)
        raise(ErrorKind::SingleClassTrainingSet,
              "training requires both real and fake scenes");

    DetectorParams params = DetectorParams::init(config);
    std::vector<double> m1(params.values.size(), 0.0);
    std::vector<double> m2(params.values.size(), 0.0);
    std::int64_t step = 0;

    Rng shuffle_rng(config.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainMetrics metrics;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle(order, shuffle_rng);
        double epoch_loss = 0.0;
        std::int64_t correct = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_scenes)) {
            std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_scenes));
            std::vector<const SceneExample*> scenes;
            scenes.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) scenes.push_back(&train_set[order[i]]);
            PackedBatch batch = pack_batch(scenes);

            LossGrad lg = loss_and_gradient(batch, params, config);
            epoch_loss += lg.loss * static_cast<double>(scenes.size());
            for (std::size_t b = 0; b < scenes.size(); ++b) {
                int predicted = lg.logits[b] > 0.0 ? 1 : 0;
                if (predicted == batch.labels[b]) ++correct;
            }

            ++step;
            const AdamConfig& a = config.adam;
            double bc1 = 1.0 - std::pow(a.beta1, static_cast<double>(step));
            double bc2 = 1.0 - std::pow(a.beta2, static_cast<double>(step));
            for (std::size_t i = 0; i < params.values.size(); ++i) {
                double gi = lg.grad[i];
                m1[i] = a.beta1 * m1[i] + (1.0 - a.beta1) * gi;
                m2[i] = a.beta2 * m2[i] + (1.0 - a.beta2) * gi * gi;
                double mhat = m1[i] / bc1;
                double vhat = m2[i] / bc2;
                params.values[i] -= a.step_size * mhat / (std::sqrt(vhat) + a.epsilon);
            }
        }
        metrics.loss = epoch_loss / static_cast<double>(train_set.size());
        metrics.accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
        if (on_epoch) on_epoch(epoch, metrics);
    }

    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.norm = norm;
    ckpt.params = std::move(params);
    ckpt.epoch = config.epochs;
    ckpt.metrics = metrics;
    return ckpt;
}

Prediction predict(const Checkpoint& checkpoint, const RawScene& scene) {
    SceneExample ex = make_example(scene, checkpoint.config, checkpoint.norm, 0);
    const SceneExample* ptr = &ex;
    PackedBatch batch = pack_batch(std::span<const SceneExample* const>(&ptr, 1));
    std::vector<double> logits = forward(batch, checkpoint.params, checkpoint.config);
    Prediction pred;
    pred.score = 1.0 / (1.0 + std::exp(-logits[0]));
    pred.label = pred.score > 0.5 ? Label::fake : Label::real; // exact 0.5 stays real
    return pred;
}

// ---------------------------------------------------------------------------
// checkpoint container

namespace {

constexpr char kCheckpointMagic[4] = {'F', '3', 'D', 'D'};
constexpr std::uint32_t kCheckpointVersion = 1;

json mask_to_json(const FeatureGroupMask& mask) {
    return {{"position", mask.include_position}, {"opacity", mask.include_opacity},
            {"scale", mask.include_scale},       {"quaternion", mask.include_quaternion},
            {"sh0", mask.include_sh0},           {"sh_rest", mask.include_sh_rest}};
}

FeatureGroupMask mask_from_json(const json& j) {
    FeatureGroupMask mask;
    mask.include_position = j.at("position").get<bool>();
    mask.include_opacity = j.at("opacity").get<bool>();
    mask.include_scale = j.at("scale").get<bool>();
    mask.include_quaternion = j.at("quaternion").get<bool>();
    mask.include_sh0 = j.at("sh0").get<bool>();
    mask.include_sh_rest = j.at("sh_rest").get<bool>();
    return mask;
}

} // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    const DetectorConfig& c = checkpoint.config;
    json meta;
    meta["config"] = {{"width", c.width},
                      {"heads", c.heads},
                      {"window", c.window},
                      {"encoder_blocks", c.encoder_blocks},
                      {"pooled_blocks", c.pooled_blocks},
                      {"decoder_blocks", c.decoder_blocks},
                      {"pool_prefix_bits", c.pool_prefix_bits},
                      {"serialize_bits", c.serialize_bits},
                      {"mask", mask_to_json(c.mask)},
                      {"domain", c.domain == InputDomain::activated ? "activated" : "stored"},
                      {"sh_degree", c.sh_degree},
                      {"seed", c.seed},
                      {"adam", {{"step_size", c.adam.step_size},
                                {"beta1", c.adam.beta1},
                                {"beta2", c.adam.beta2},
                                {"epsilon", c.adam.epsilon}}},
                      {"epochs", c.epochs},
                      {"batch_scenes", c.batch_scenes}};
    meta["norm"] = {{"has_log_scale_stats", checkpoint.norm.has_log_scale_stats},
                    {"log_scale_mean", checkpoint.norm.log_scale_mean},
                    {"log_scale_std", checkpoint.norm.log_scale_std}};
    meta["epoch"] = checkpoint.epoch;
    meta["metrics"] = {{"loss", checkpoint.metrics.loss},
                       {"accuracy", checkpoint.metrics.accuracy}};
    meta["param_count"] = checkpoint.params.values.size();
    std::string meta_text = meta.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorKind::IoError, "cannot open \"" + path + "\" for writing");
    out.write(kCheckpointMagic, 4);
    auto put_u32 = [&](std::uint32_t v) {
        char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 24)};
        out.write(b, 4);
    };
    put_u32(kCheckpointVersion);
    std::uint64_t len = meta_text.size();
    put_u32(static_cast<std::uint32_t>(len));
    put_u32(static_cast<std::uint32_t>(len >> 32));
    out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
    std::vector<float> floats(checkpoint.params.values.begin(), checkpoint.params.values.end());
    out.write(reinterpret_cast<const char*>(floats.data()),
              static_cast<std::streamsize>(floats.size() * sizeof(float)));
    if (!out) raise(ErrorKind::IoError, "short write to \"" + path + "\"");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::IoError, "cannot open \"" + path + "\"");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        raise(ErrorKind::BadMagic, "\"" + path + "\" is not an F3DD checkpoint");
    auto get_u32 = [&]() {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    std::uint32_t version = get_u32();
    if (version != kCheckpointVersion)
        raise(ErrorKind::VersionUnsupported, "checkpoint version " + std::to_string(version));
    std::uint64_t len = get_u32();
    len |= static_cast<std::uint64_t>(get_u32()) << 32;
    std::string meta_text(len, '\0');
    in.read(meta_text.data(), static_cast<std::streamsize>(len));
    if (!in) raise(ErrorKind::ParseError, "checkpoint metadata truncated");

    json meta;
    try {
        meta = json::parse(meta_text);
    } catch (const json::exception& e) {
        raise(ErrorKind::ParseError, std::string("checkpoint metadata: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        const json& jc = meta.at("config");
        DetectorConfig& c = ckpt.config;
        c.width = jc.at("width").get<int>();
        c.heads = jc.at("heads").get<int>();
        c.window = jc.at("window").get<int>();
        c.encoder_blocks = jc.at("encoder_blocks").get<int>();
        c.pooled_blocks = jc.at("pooled_blocks").get<int>();
        c.decoder_blocks = jc.at("decoder_blocks").get<int>();
        c.pool_prefix_bits = jc.at("pool_prefix_bits").get<int>();
        c.serialize_bits = jc.at("serialize_bits").get<int>();
        c.mask = mask_from_json(jc.at("mask"));
        c.domain = jc.at("domain").get<std::string>() == "stored" ? InputDomain::stored
                                                                  : InputDomain::activated;
        c.sh_degree = jc.at("sh_degree").get<int>();
        c.seed = jc.at("seed").get<std::uint64_t>();
        c.adam.step_size = jc.at("adam").at("step_size").get<double>();
        c.adam.beta1 = jc.at("adam").at("beta1").get<double>();
        c.adam.beta2 = jc.at("adam").at("beta2").get<double>();
        c.adam.epsilon = jc.at("adam").at("epsilon").get<double>();
        c.epochs = jc.at("epochs").get<int>();
        c.batch_scenes = jc.at("batch_scenes").get<int>();

        const json& jn = meta.at("norm");
        ckpt.norm.has_log_scale_stats = jn.at("has_log_scale_stats").get<bool>();
        for (int k = 0; k < 3; ++k) {
            ckpt.norm.log_scale_mean[static_cast<std::size_t>(k)] =
                jn.at("log_scale_mean").at(k).get<double>();
            ckpt.norm.log_scale_std[static_cast<std::size_t>(k)] =
                jn.at("log_scale_std").at(k).get<double>();
        }
        ckpt.epoch = meta.at("epoch").get<int>();
        ckpt.metrics.loss = meta.at("metrics").at("loss").get<double>();
        ckpt.metrics.accuracy = meta.at("metrics").at("accuracy").get<double>();
    } catch (const json::exception& e) {
        raise(ErrorKind::ParseError, std::string("checkpoint metadata: ") + e.what());
    }

    ckpt.params = DetectorParams::zeros(ckpt.config);
    std::vector<float> floats(ckpt.params.values.size());
    in.read(reinterpret_cast<char*>(floats.data()),
            static_cast<std::streamsize>(floats.size() * sizeof(float)));
    if (!in) raise(ErrorKind::ShapeMismatch, "checkpoint parameter block truncated");
    for (std::size_t i = 0; i < floats.size(); ++i)
        ckpt.params.values[i] = static_cast<double>(floats[i]);
    return ckpt;
}

} // namespace f3dgs
