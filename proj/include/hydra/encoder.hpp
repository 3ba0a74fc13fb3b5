#pragma once

// Depth encoder: sinusoidal depth-index encoding, multi-head self-attention
// blocks with residual + layer norm, mean pooling, logistic classifier, and
// binary cross-entropy. Every forward has a matching exact backward.

#include <cmath>
#include <span>
#include <vector>

#include "hydra/common.hpp"
#include "hydra/fusion.hpp"
#include "hydra/params.hpp"

namespace hydra {

inline constexpr double kProbabilityFloor = 1e-7;

/// PE(depth, i): sin(depth / 10000^(2i/d)) for even i,
/// cos(depth / 10000^(2(i-1)/d)) for odd i. `depth` is the slice index.
inline std::vector<double> positional_encoding(double depth, std::size_t d_model) {
    if (d_model == 0) throw DomainError("positional_encoding: d_model must be >= 1");
    std::vector<double> pe(d_model);
    const auto d = static_cast<double>(d_model);
    for (std::size_t i = 0; i < d_model; ++i) {
        const auto fi = static_cast<double>(i);
        if (i % 2 == 0)
            pe[i] = std::sin(depth / std::pow(10000.0, 2.0 * fi / d));
        else
            pe[i] = std::cos(depth / std::pow(10000.0, 2.0 * (fi - 1.0) / d));
    }
    return pe;
}

/// Ordered (depth, feature) pairs fed to the encoder.
struct DepthSequence {
    std::vector<double> depths;  // mm, strictly increasing
    std::vector<FeatureVector> features;
    std::size_t d_model = 0;

    std::size_t size() const { return features.size(); }

    void validate() const {
        if (features.empty()) throw DomainError("DepthSequence: empty");
        if (depths.size() != features.size()) throw DomainError("DepthSequence: depth/feature count mismatch");
        for (std::size_t i = 0; i < features.size(); ++i) {
            if (features[i].values.size() != d_model) throw DomainError("DepthSequence: feature length != d_model");
            if (i > 0 && !(depths[i] > depths[i - 1])) throw DomainError("DepthSequence: depths not increasing");
        }
    }
};

// ---------------------------------------------------------------------------
// Dense helpers on row-major matrices.

namespace detail {

// y[n, out] = x[n, in] W^T + b, W is [out, in].
inline std::vector<double> linear(std::span<const double> x, std::size_t n, std::size_t in,
                                  std::span<const double> w, std::span<const double> b, std::size_t out) {
    std::vector<double> y(n * out);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < out; ++o) {
            double s = b[o];
            const double* wr = w.data() + o * in;
            const double* xr = x.data() + r * in;
            for (std::size_t i = 0; i < in; ++i) s += wr[i] * xr[i];
            y[r * out + o] = s;
        }
    return y;
}

// Accumulates dW, db and dx (+=) for linear().
inline void linear_backward(std::span<const double> x, std::span<const double> dy, std::size_t n, std::size_t in,
                            std::size_t out, std::span<const double> w, std::span<double> dw, std::span<double> db,
                            std::span<double> dx) {
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dy[r * out + o];
            db[o] += g;
            const double* xr = x.data() + r * in;
            double* dwr = dw.data() + o * in;
            const double* wr = w.data() + o * in;
            double* dxr = dx.data() + r * in;
            for (std::size_t i = 0; i < in; ++i) {
                dwr[i] += g * xr[i];
                dxr[i] += g * wr[i];
            }
        }
}

}  // namespace detail

/// Per-token layer normalization with affine gain and shift.
struct LayerNormCache {
    std::vector<double> xhat;     // normalized, before affine
    std::vector<double> inv_std;  // per token
};

inline std::vector<double> layer_norm(std::span<const double> x, std::size_t n, std::size_t d,
                                      std::span<const double> gamma, std::span<const double> beta, double eps,
                                      LayerNormCache& cache) {
    std::vector<double> out(n * d);
    cache.xhat.assign(n * d, 0.0);
    cache.inv_std.assign(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const double* xr = x.data() + r * d;
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean += xr[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        cache.inv_std[r] = inv;
        for (std::size_t i = 0; i < d; ++i) {
            const double h = (xr[i] - mean) * inv;
            cache.xhat[r * d + i] = h;
            out[r * d + i] = gamma[i] * h + beta[i];
        }
    }
    return out;
}

inline std::vector<double> layer_norm_backward(std::span<const double> dout, std::size_t n, std::size_t d,
                                               std::span<const double> gamma, const LayerNormCache& cache,
                                               std::span<double> dgamma, std::span<double> dbeta) {
    std::vector<double> dx(n * d);
    const auto fd = static_cast<double>(d);
    for (std::size_t r = 0; r < n; ++r) {
        double mean_g = 0.0;
        double mean_gx = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double g = dout[r * d + i];
            const double h = cache.xhat[r * d + i];
            dgamma[i] += g * h;
            dbeta[i] += g;
            const double gh = g * gamma[i];
            mean_g += gh;
            mean_gx += gh * h;
        }
        mean_g /= fd;
        mean_gx /= fd;
        for (std::size_t i = 0; i < d; ++i) {
            const double h = cache.xhat[r * d + i];
            dx[r * d + i] = cache.inv_std[r] * (dout[r * d + i] * gamma[i] - mean_g - h * mean_gx);
        }
    }
    return dx;
}

/// Row softmax with max subtraction.
inline void softmax_rows(std::span<double> m, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = m.data() + r * cols;
        double mx = row[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        for (std::size_t c = 0; c < cols; ++c) row[c] /= sum;
    }
}

/// Everything one encoder block needs for its backward pass.
struct AttentionCache {
    std::size_t n = 0;
    std::vector<double> x;       // block input [n, d]
    std::vector<double> q, k, v;  // projections [n, d]
    std::vector<double> probs;   // [heads, n, n]
    std::vector<double> heads;   // concatenated head outputs [n, d]
    LayerNormCache ln1;
    std::vector<double> attn_out;  // after ln1 [n, d]
    std::vector<double> ffn_pre;   // [n, f]
    std::vector<double> ffn_act;   // [n, f]
    LayerNormCache ln2;
    std::vector<double> out;  // block output [n, d]
};

/// One encoder block: full (non-causal) multi-head self-attention with
/// scale 1/sqrt(d_head), output projection, residual + layer norm, then an
/// optional ReLU feed-forward sublayer with its own residual + layer norm.
inline std::vector<double> multi_head_attention(std::span<const double> x, std::size_t n, const ModelParams& params,
                                                std::size_t layer, AttentionCache& cache) {
    const auto& cfg = params.config();
    const auto att = cfg.attention();
    att.validate();
    if (n == 0) throw DomainError("multi_head_attention: empty sequence");
    const std::size_t d = att.d_model;
    if (x.size() != n * d) throw DomainError("multi_head_attention: input shape mismatch");
    const auto& L = params.layers().at(layer);
    const std::size_t H = att.n_heads;
    const std::size_t dh = att.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    cache.n = n;
    cache.x.assign(x.begin(), x.end());
    cache.q = detail::linear(x, n, d, params.view(L.wq), params.view(L.bq), d);
    cache.k = detail::linear(x, n, d, params.view(L.wk), params.view(L.bk), d);
    cache.v = detail::linear(x, n, d, params.view(L.wv), params.view(L.bv), d);
    cache.probs.assign(H * n * n, 0.0);
    cache.heads.assign(n * d, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
        std::span<double> P(cache.probs.data() + h * n * n, n * n);
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += cache.q[i * d + off + c] * cache.k[j * d + off + c];
                P[i * n + j] = s * scale;
            }
        softmax_rows(P, n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < dh; ++c) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += P[i * n + j] * cache.v[j * d + off + c];
                cache.heads[i * d + off + c] = s;
            }
    }
    auto o = detail::linear(cache.heads, n, d, params.view(L.wo), params.view(L.bo), d);
    for (std::size_t i = 0; i < n * d; ++i) o[i] += x[i];
    cache.attn_out = layer_norm(o, n, d, params.view(L.ln1_gamma), params.view(L.ln1_beta), cfg.ln_eps, cache.ln1);

    if (cfg.ffn) {
        const std::size_t f = cfg.ffn_hidden;
        cache.ffn_pre = detail::linear(cache.attn_out, n, d, params.view(L.w1), params.view(L.b1), f);
        cache.ffn_act = cache.ffn_pre;
        for (auto& v : cache.ffn_act) v = v > 0.0 ? v : 0.0;
        auto y = detail::linear(cache.ffn_act, n, f, params.view(L.w2), params.view(L.b2), d);
        for (std::size_t i = 0; i < n * d; ++i) y[i] += cache.attn_out[i];
        cache.out = layer_norm(y, n, d, params.view(L.ln2_gamma), params.view(L.ln2_beta), cfg.ln_eps, cache.ln2);
    } else {
        cache.out = cache.attn_out;
    }
    if (!all_finite(cache.out)) throw NumericError("multi_head_attention: non-finite output");
    return cache.out;
}

inline std::vector<double> multi_head_attention_backward(std::span<const double> dout, const ModelParams& params,
                                                         std::size_t layer, const AttentionCache& cache,
                                                         std::span<double> grads) {
    const auto& cfg = params.config();
    const std::size_t n = cache.n;
    const std::size_t d = cfg.d_model();
    const std::size_t H = cfg.n_heads;
    const std::size_t dh = d / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto& L = params.layers().at(layer);
    auto g = [&](const ParamRef& r) { return grads.subspan(r.offset, r.size); };

    std::vector<double> d_attn_out(dout.begin(), dout.end());
    if (cfg.ffn) {
        const std::size_t f = cfg.ffn_hidden;
        auto dy = layer_norm_backward(dout, n, d, params.view(L.ln2_gamma), cache.ln2, g(L.ln2_gamma), g(L.ln2_beta));
        d_attn_out = dy;  // residual
        std::vector<double> d_act(n * f);
        detail::linear_backward(cache.ffn_act, dy, n, f, d, params.view(L.w2), g(L.w2), g(L.b2), d_act);
        for (std::size_t i = 0; i < n * f; ++i)
            if (cache.ffn_pre[i] <= 0.0) d_act[i] = 0.0;
        detail::linear_backward(cache.attn_out, d_act, n, d, f, params.view(L.w1), g(L.w1), g(L.b1), d_attn_out);
    }

    auto dres = layer_norm_backward(d_attn_out, n, d, params.view(L.ln1_gamma), cache.ln1, g(L.ln1_gamma),
                                    g(L.ln1_beta));
    std::vector<double> dx = dres;  // residual path
    std::vector<double> dheads(n * d);
    detail::linear_backward(cache.heads, dres, n, d, d, params.view(L.wo), g(L.wo), g(L.bo), dheads);

    std::vector<double> dq(n * d), dk(n * d), dv(n * d);
    std::vector<double> dP(n * n);
    for (std::size_t h = 0; h < H; ++h) {
        const double* P = cache.probs.data() + h * n * n;
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += dheads[i * d + off + c] * cache.v[j * d + off + c];
                dP[i * n + j] = s;
            }
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < dh; ++c) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) s += P[i * n + j] * dheads[i * d + off + c];
                dv[j * d + off + c] += s;
            }
        // Softmax Jacobian, then the scaled dot product.
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += dP[i * n + j] * P[i * n + j];
            for (std::size_t j = 0; j < n; ++j) {
                const double ds = P[i * n + j] * (dP[i * n + j] - dot) * scale;
                for (std::size_t c = 0; c < dh; ++c) {
                    dq[i * d + off + c] += ds * cache.k[j * d + off + c];
                    dk[j * d + off + c] += ds * cache.q[i * d + off + c];
                }
            }
        }
    }
    detail::linear_backward(cache.x, dq, n, d, d, params.view(L.wq), g(L.wq), g(L.bq), dx);
    detail::linear_backward(cache.x, dk, n, d, d, params.view(L.wk), g(L.wk), g(L.bk), dx);
    detail::linear_backward(cache.x, dv, n, d, d, params.view(L.wv), g(L.wv), g(L.bv), dx);
    return dx;
}

struct EncoderCache {
    std::size_t n = 0;
    std::vector<AttentionCache> blocks;
    std::vector<double> pooled;
    double logit = 0.0;
    double prob = 0.5;
    bool clamped = false;
};

inline double clamp_probability(double p) { return std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor); }

inline double logistic(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// Classifier logit of the mean over n tokens [n, d_model].
inline double readout_logit(std::span<const double> tokens, std::size_t n, const ModelParams& params,
                            std::vector<double>* pooled_out = nullptr) {
    const std::size_t d = params.config().d_model();
    if (n == 0 || tokens.size() != n * d) throw DomainError("readout: token buffer is not [n, d_model]");
    std::vector<double> pooled(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) pooled[c] += tokens[i * d + c];
    for (auto& v : pooled) v /= static_cast<double>(n);
    const double* w = params.value(params.classifier_weight());
    double z = *params.value(params.classifier_bias());
    for (std::size_t c = 0; c < d; ++c) z += w[c] * pooled[c];
    if (!std::isfinite(z)) throw NumericError("encoder_classify: non-finite logit");
    if (pooled_out != nullptr) *pooled_out = std::move(pooled);
    return z;
}

/// Depth-index encoding, attention blocks, mean pool, logistic classifier.
/// Returns P(wet), clamped to [1e-7, 1 - 1e-7].
inline double encoder_classify(const DepthSequence& seq, const ModelParams& params, EncoderCache* cache = nullptr) {
    seq.validate();
    check_params_finite(params);
    const std::size_t d = params.config().d_model();
    if (seq.d_model != d) throw DomainError("encoder_classify: sequence width differs from d_model");
    const std::size_t n = seq.size();
    std::vector<double> x(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto pe = positional_encoding(static_cast<double>(i), d);
        for (std::size_t c = 0; c < d; ++c) x[i * d + c] = seq.features[i].values[c] + pe[c];
    }
    EncoderCache local;
    EncoderCache& ec = cache != nullptr ? *cache : local;
    ec.n = n;
    ec.blocks.assign(params.layers().size(), AttentionCache{});
    for (std::size_t l = 0; l < params.layers().size(); ++l) x = multi_head_attention(x, n, params, l, ec.blocks[l]);
    const double z = readout_logit(x, n, params, &ec.pooled);
    ec.logit = z;
    const double p = logistic(z);
    ec.prob = clamp_probability(p);
    ec.clamped = ec.prob != p;
    return ec.prob;
}

/// Backward from dL/dP(wet); returns dL/d(feature) for each sequence item.
inline std::vector<std::vector<double>> encoder_backward(double d_prob, const ModelParams& params,
                                                         const EncoderCache& cache, std::span<double> grads) {
    const std::size_t d = params.config().d_model();
    const std::size_t n = cache.n;
    const double d_logit = cache.clamped ? 0.0 : d_prob * cache.prob * (1.0 - cache.prob);
    const auto& wref = params.classifier_weight();
    const double* w = params.value(wref);
    grads[params.classifier_bias().offset] += d_logit;
    std::vector<double> dx(n * d);
    for (std::size_t c = 0; c < d; ++c) {
        grads[wref.offset + c] += d_logit * cache.pooled[c];
        const double g = d_logit * w[c] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) dx[i * d + c] = g;
    }
    for (std::size_t l = params.layers().size(); l-- > 0;)
        dx = multi_head_attention_backward(dx, params, l, cache.blocks[l], grads);
    std::vector<std::vector<double>> out(n, std::vector<double>(d));
    for (std::size_t i = 0; i < n; ++i) std::copy_n(dx.begin() + static_cast<long>(i * d), d, out[i].begin());
    return out;
}

/// Labels and predicted P(wet) for a batch.
struct LossBatch {
    std::vector<double> labels;
    std::vector<double> predictions;
};

struct LossResult {
    double loss = 0.0;
    std::vector<double> grad;  // dL / d prediction_i
};

/// Mean binary cross-entropy and its analytic gradient
/// (p_i - y_i) / (N p_i (1 - p_i)).
inline LossResult bce_loss(const LossBatch& batch) {
    const std::size_t N = batch.labels.size();
    if (N == 0 || batch.predictions.size() != N) throw DomainError("bce_loss: empty or mismatched batch");
    LossResult r;
    r.grad.resize(N);
    const auto fn = static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) {
        const double y = batch.labels[i];
        const double p = batch.predictions[i];
        if (y != 0.0 && y != 1.0) throw DomainError("bce_loss: labels must be 0 or 1");
        if (!(p > 0.0 && p < 1.0)) throw DomainError("bce_loss: prediction outside (0, 1)");
        r.loss -= y * std::log(p) + (1.0 - y) * std::log1p(-p);
        r.grad[i] = (p - y) / (fn * p * (1.0 - p));
    }
    r.loss /= fn;
    return r;
}

}  // namespace hydra
