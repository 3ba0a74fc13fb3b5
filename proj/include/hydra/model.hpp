#pragma once

// Whole-network forward/backward for one sample: per-slice fusion and CNN
// features, the depth encoder, and the single-slice probe used to pretrain
// the extractor.

#include <span>
#include <vector>

#include "hydra/encoder.hpp"
#include "hydra/fusion.hpp"
#include "hydra/params.hpp"
#include "hydra/recon.hpp"

namespace hydra {

/// Network input: normalized SAR slices (shallow to deep) and the aligned
/// camera image.
struct ModelInput {
    std::vector<double> depths;  // mm
    std::vector<const Image*> sar;
    const RgbImage* rgb = nullptr;
};

struct SliceCache {
    const Image* sar = nullptr;
    CnnCache cnn;
    std::vector<double> pooled;  // GAP output before the embedding
    std::size_t fh = 0, fw = 0;
};

struct ForwardCache {
    std::vector<SliceCache> slices;
    EncoderCache encoder;
    std::vector<double> probe_feature;
    bool probe = false;
};

namespace detail {

// Applies the modality to a fused image. RGB-only keeps an all-ones mask and
// no SAR channel, SAR-only drops the colour planes.
inline FusedImage fuse_for(const Image& sar, const RgbImage& rgb, double alpha, Modality m) {
    switch (m) {
        case Modality::SarOnly: return mask_fuse(sar, RgbImage(rgb.width(), rgb.height(), 0.0), alpha);
        case Modality::RgbOnly: {
            FusedImage f = mask_fuse(Image(sar.width, sar.height, 1.0), rgb, alpha);
            std::fill(f.channels.channel(3), f.channels.channel(3) + f.channels.plane(), 0.0);
            return f;
        }
        default: return mask_fuse(sar, rgb, alpha);
    }
}

inline void check_input(const ModelInput& in) {
    if (in.sar.empty() || in.rgb == nullptr) throw DomainError("model input needs SAR slices and an RGB image");
    if (in.depths.size() != in.sar.size()) throw DomainError("model input: depth/slice count mismatch");
}

inline FeatureVector slice_feature(const Image& sar, const RgbImage& rgb, const ModelParams& params,
                                   SliceCache* cache) {
    const double alpha = *params.value(params.alpha());
    const FusedImage f = fuse_for(sar, rgb, alpha, params.config().modality);
    FeatureMap fm = cnn_forward(f, params, cache != nullptr ? &cache->cnn : nullptr);
    const FeatureVector pooled = gap(fm);
    if (cache != nullptr) {
        cache->sar = &sar;
        cache->fh = fm.height;
        cache->fw = fm.width;
        cache->pooled = pooled.values;
    }
    const std::size_t d = pooled.values.size();
    return {linear(pooled.values, 1, d, params.view(params.embed_weight()), params.view(params.embed_bias()), d)};
}

// d(feature) -> parameter gradients, including the balance parameter.
inline void slice_backward(std::span<const double> d_feature, const SliceCache& sc, const ModelParams& params,
                           std::span<double> grads) {
    const std::size_t d = d_feature.size();
    const auto& ew = params.embed_weight();
    const auto& eb = params.embed_bias();
    std::vector<double> d_pooled(d);
    linear_backward(sc.pooled, d_feature, 1, d, d, params.view(ew), grads.subspan(ew.offset, ew.size),
                    grads.subspan(eb.offset, eb.size), d_pooled);
    FeatureMap d_top = gap_backward(d_pooled, d, sc.fh, sc.fw);
    FeatureMap d_in = cnn_backward(sc.cnn, params, std::move(d_top), grads);
    if (params.config().modality == Modality::RgbOnly) return;
    const double* d3 = d_in.channel(3);
    double da = 0.0;
    for (std::size_t i = 0; i < d_in.plane(); ++i) da += d3[i] * sc.sar->pixels[i];
    grads[params.alpha().offset] += da;
}

}  // namespace detail

/// P(wet) for a full depth stack.
inline double model_forward(const ModelInput& in, const ModelParams& params, ForwardCache* cache = nullptr) {
    detail::check_input(in);
    check_params_finite(params);
    DepthSequence seq;
    seq.depths = in.depths;
    seq.d_model = params.config().d_model();
    if (cache != nullptr) {
        cache->probe = false;
        cache->slices.assign(in.sar.size(), SliceCache{});
    }
    for (std::size_t i = 0; i < in.sar.size(); ++i)
        seq.features.push_back(
            detail::slice_feature(*in.sar[i], *in.rgb, params, cache != nullptr ? &cache->slices[i] : nullptr));
    return encoder_classify(seq, params, cache != nullptr ? &cache->encoder : nullptr);
}

/// Accumulates dL/dparams given dL/dP(wet) and a cache from model_forward.
inline void model_backward(double d_prob, const ModelParams& params, const ForwardCache& cache,
                           std::span<double> grads) {
    if (cache.probe) throw StateError("model_backward: cache holds a probe pass");
    const auto d_features = encoder_backward(d_prob, params, cache.encoder, grads);
    for (std::size_t i = 0; i < cache.slices.size(); ++i)
        detail::slice_backward(d_features[i], cache.slices[i], params, grads);
}

/// Single-slice pretraining head: logistic(probe . GAP(features)).
inline double probe_forward(const Image& sar, const RgbImage& rgb, const ModelParams& params,
                            ForwardCache* cache = nullptr) {
    check_params_finite(params);
    if (cache != nullptr) {
        cache->probe = true;
        cache->slices.assign(1, SliceCache{});
    }
    const FeatureVector f = detail::slice_feature(sar, rgb, params, cache != nullptr ? &cache->slices[0] : nullptr);
    const double* w = params.value(params.probe_weight());
    double z = *params.value(params.probe_bias());
    for (std::size_t c = 0; c < f.values.size(); ++c) z += w[c] * f.values[c];
    if (!std::isfinite(z)) throw NumericError("probe: non-finite logit");
    const double p = logistic(z);
    const double clamped = clamp_probability(p);
    if (cache != nullptr) {
        cache->probe_feature = f.values;
        cache->encoder.prob = clamped;
        cache->encoder.clamped = clamped != p;
    }
    return clamped;
}

inline void probe_backward(double d_prob, const ModelParams& params, const ForwardCache& cache,
                           std::span<double> grads) {
    if (!cache.probe) throw StateError("probe_backward: cache holds a full-model pass");
    const double p = cache.encoder.prob;
    const double d_logit = cache.encoder.clamped ? 0.0 : d_prob * p * (1.0 - p);
    const auto& wref = params.probe_weight();
    const double* w = params.value(wref);
    grads[params.probe_bias().offset] += d_logit;
    std::vector<double> d_feature(cache.probe_feature.size());
    for (std::size_t c = 0; c < d_feature.size(); ++c) {
        grads[wref.offset + c] += d_logit * cache.probe_feature[c];
        d_feature[c] = d_logit * w[c];
    }
    detail::slice_backward(d_feature, cache.slices[0], params, grads);
}

/// Probe weights pulled back through the embedding onto the terminal
/// feature channels.
inline std::vector<double> cam_weights(const ModelParams& params) {
    const std::size_t d = params.config().d_model();
    const double* w = params.value(params.embed_weight());
    const double* p = params.value(params.probe_weight());
    std::vector<double> out(d, 0.0);
    for (std::size_t o = 0; o < d; ++o)
        for (std::size_t i = 0; i < d; ++i) out[i] += p[o] * w[o * d + i];
    return out;
}

/// CAM of one slice for the probe head.
inline Image slice_cam(const Image& sar, const RgbImage& rgb, const ModelParams& params) {
    const FusedImage f =
        detail::fuse_for(sar, rgb, *params.value(params.alpha()), params.config().modality);
    return cam(cnn_forward(f, params), cam_weights(params));
}

}  // namespace hydra
