#pragma once

// Trainable state of the fusion extractor, depth encoder and classifier.
//
// All parameters live in one flat value vector with a parallel gradient
// vector; ParamRef records where each named tensor sits. Backward passes
// write into any span shaped like `grads`, which lets batch members use
// private gradient buffers that are reduced in a fixed order.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hydra/common.hpp"

namespace hydra {

/// Which modalities feed the extractor. Baselines use the same network.
enum class Modality : std::uint8_t { Fused = 0, SarOnly = 1, RgbOnly = 2 };

inline const char* to_string(Modality m) {
    switch (m) {
        case Modality::SarOnly: return "sar";
        case Modality::RgbOnly: return "rgb";
        default: return "fused";
    }
}

inline Modality parse_modality(const std::string& s) {
    if (s == "fused") return Modality::Fused;
    if (s == "sar") return Modality::SarOnly;
    if (s == "rgb") return Modality::RgbOnly;
    throw ConfigError("unknown modality '" + s + "' (expected fused, sar or rgb)");
}

struct AttentionConfig {
    std::size_t n_heads = 2;
    std::size_t d_model = 32;
    std::size_t n_layers = 1;

    void validate() const {
        if (n_heads == 0 || d_model == 0 || n_layers == 0 || d_model % n_heads != 0)
            throw ConfigError("AttentionConfig: need n_heads, d_model, n_layers >= 1 and n_heads | d_model");
    }
    std::size_t head_dim() const { return d_model / n_heads; }
};

struct ModelConfig {
    std::size_t input_channels = 4;
    std::vector<std::size_t> conv_channels{8, 16, 32};
    std::size_t n_heads = 2;
    std::size_t n_layers = 1;
    bool ffn = false;
    std::size_t ffn_hidden = 64;
    double ln_eps = 1e-12;
    Modality modality = Modality::Fused;

    std::size_t d_model() const { return conv_channels.empty() ? 0 : conv_channels.back(); }
    AttentionConfig attention() const { return {n_heads, d_model(), n_layers}; }

    void validate() const {
        if (input_channels != 4) throw ConfigError("ModelConfig: fused input has 4 channels");
        if (conv_channels.empty()) throw ConfigError("ModelConfig: need at least one conv layer");
        for (auto c : conv_channels)
            if (c == 0) throw ConfigError("ModelConfig: zero-width conv layer");
        if (ffn && ffn_hidden == 0) throw ConfigError("ModelConfig: ffn_hidden must be >= 1");
        if (!(ln_eps > 0.0)) throw ConfigError("ModelConfig: ln_eps must be positive");
        attention().validate();
    }
};

struct ParamRef {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
};

struct ConvRefs {
    ParamRef weight;  // [out, in, 3, 3]
    ParamRef bias;    // [out]
    std::size_t in = 0;
    std::size_t out = 0;
};

struct EncoderLayerRefs {
    ParamRef wq, bq, wk, bk, wv, bv, wo, bo;  // projections [d, d] and [d]
    ParamRef ln1_gamma, ln1_beta;
    ParamRef w1, b1, w2, b2;  // feed-forward, only when enabled
    ParamRef ln2_gamma, ln2_beta;
};

class ModelParams {
  public:
    ModelParams() = default;

    explicit ModelParams(ModelConfig cfg) : config_(std::move(cfg)) {
        config_.validate();
        const std::size_t d = config_.d_model();
        alpha_ = add("fusion.alpha", {1});
        std::size_t in = config_.input_channels;
        for (std::size_t l = 0; l < config_.conv_channels.size(); ++l) {
            const std::size_t out = config_.conv_channels[l];
            const std::string p = "conv" + std::to_string(l);
            ConvRefs c;
            c.weight = add(p + ".weight", {out, in, 3, 3});
            c.bias = add(p + ".bias", {out});
            c.in = in;
            c.out = out;
            conv_.push_back(c);
            in = out;
        }
        embed_w_ = add("embed.weight", {d, d});
        embed_b_ = add("embed.bias", {d});
        for (std::size_t l = 0; l < config_.n_layers; ++l) {
            const std::string p = "encoder" + std::to_string(l);
            EncoderLayerRefs e;
            e.wq = add(p + ".wq", {d, d});
            e.bq = add(p + ".bq", {d});
            e.wk = add(p + ".wk", {d, d});
            e.bk = add(p + ".bk", {d});
            e.wv = add(p + ".wv", {d, d});
            e.bv = add(p + ".bv", {d});
            e.wo = add(p + ".wo", {d, d});
            e.bo = add(p + ".bo", {d});
            e.ln1_gamma = add(p + ".ln1.gamma", {d});
            e.ln1_beta = add(p + ".ln1.beta", {d});
            if (config_.ffn) {
                const std::size_t f = config_.ffn_hidden;
                e.w1 = add(p + ".ffn.w1", {f, d});
                e.b1 = add(p + ".ffn.b1", {f});
                e.w2 = add(p + ".ffn.w2", {d, f});
                e.b2 = add(p + ".ffn.b2", {d});
                e.ln2_gamma = add(p + ".ln2.gamma", {d});
                e.ln2_beta = add(p + ".ln2.beta", {d});
            }
            layers_.push_back(e);
        }
        cls_w_ = add("classifier.weight", {d});
        cls_b_ = add("classifier.bias", {1});
        probe_w_ = add("probe.weight", {d});
        probe_b_ = add("probe.bias", {1});
        values.assign(total_, 0.0);
        grads.assign(total_, 0.0);
    }

    const ModelConfig& config() const { return config_; }
    const ParamRef& alpha() const { return alpha_; }
    const std::vector<ConvRefs>& conv() const { return conv_; }
    /// Per-slice feature embedding applied to the pooled CNN output.
    const ParamRef& embed_weight() const { return embed_w_; }
    const ParamRef& embed_bias() const { return embed_b_; }
    const std::vector<EncoderLayerRefs>& layers() const { return layers_; }
    const ParamRef& classifier_weight() const { return cls_w_; }
    const ParamRef& classifier_bias() const { return cls_b_; }
    const ParamRef& probe_weight() const { return probe_w_; }
    const ParamRef& probe_bias() const { return probe_b_; }

    /// Every tensor in storage order.
    const std::vector<ParamRef>& tensors() const { return order_; }
    const ParamRef& find(const std::string& name) const {
        for (const auto& r : order_)
            if (r.name == name) return r;
        throw DomainError("unknown parameter " + name);
    }

    std::size_t size() const { return total_; }

    double* value(const ParamRef& r) { return values.data() + r.offset; }
    const double* value(const ParamRef& r) const { return values.data() + r.offset; }
    std::span<double> view(const ParamRef& r) { return {values.data() + r.offset, r.size}; }
    std::span<const double> view(const ParamRef& r) const { return {values.data() + r.offset, r.size}; }

    void zero_grad() { std::fill(grads.begin(), grads.end(), 0.0); }

    bool finite() const { return all_finite(values); }

    std::vector<double> values;
    std::vector<double> grads;

  private:
    ParamRef add(std::string name, std::vector<std::size_t> shape) {
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        ParamRef r{std::move(name), std::move(shape), total_, n};
        total_ += n;
        order_.push_back(r);
        return r;
    }

    ModelConfig config_;
    ParamRef alpha_;
    std::vector<ConvRefs> conv_;
    std::vector<EncoderLayerRefs> layers_;
    ParamRef embed_w_, embed_b_;
    ParamRef cls_w_, cls_b_, probe_w_, probe_b_;
    std::vector<ParamRef> order_;
    std::size_t total_ = 0;
};

/// He-normal conv kernels, identity embedding, Xavier-normal attention
/// projections, zero biases, unit layer-norm gain, balance parameter alpha = 1.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams p(cfg);
    Rng rng(seed);
    auto fill_normal = [&](const ParamRef& r, double stddev) {
        for (auto& v : p.view(r)) v = stddev * rng.normal();
    };
    auto fill = [&](const ParamRef& r, double x) {
        for (auto& v : p.view(r)) v = x;
    };
    fill(p.alpha(), 1.0);
    for (const auto& c : p.conv()) fill_normal(c.weight, std::sqrt(2.0 / static_cast<double>(9 * c.in)));
    const auto d = static_cast<double>(cfg.d_model());
    for (std::size_t i = 0; i < cfg.d_model(); ++i) p.value(p.embed_weight())[i * cfg.d_model() + i] = 1.0;
    for (const auto& e : p.layers()) {
        for (const auto* w : {&e.wq, &e.wk, &e.wv, &e.wo}) fill_normal(*w, std::sqrt(1.0 / d));
        fill(e.ln1_gamma, 1.0);
        if (cfg.ffn) {
            fill_normal(e.w1, std::sqrt(2.0 / d));
            fill_normal(e.w2, std::sqrt(1.0 / static_cast<double>(cfg.ffn_hidden)));
            fill(e.ln2_gamma, 1.0);
        }
    }
    fill_normal(p.classifier_weight(), std::sqrt(1.0 / d));
    fill_normal(p.probe_weight(), std::sqrt(1.0 / d));
    return p;
}

}  // namespace hydra
