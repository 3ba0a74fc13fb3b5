#pragma once

// Single-depth feature extraction: SAR-masked RGB plus a balanced SAR
// channel, a stride-2 convolutional stack, global average pooling and CAM.

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "hydra/common.hpp"
#include "hydra/params.hpp"
#include "hydra/recon.hpp"

namespace hydra {

/// Dense [channels, height, width] tensor.
struct FeatureMap {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
        : channels(c), height(h), width(w), data(c * h * w, fill) {}

    std::size_t plane() const { return height * width; }
    double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
    double* channel(std::size_t c) { return data.data() + c * plane(); }
    const double* channel(std::size_t c) const { return data.data() + c * plane(); }
    bool operator==(const FeatureMap&) const = default;
};

/// Camera image, three planes with values in [0, 1].
struct RgbImage {
    FeatureMap planes;

    RgbImage() = default;
    RgbImage(std::size_t width, std::size_t height, double fill = 0.0) : planes(3, height, width, fill) {}

    std::size_t width() const { return planes.width; }
    std::size_t height() const { return planes.height; }
    double& at(std::size_t c, std::size_t y, std::size_t x) { return planes.at(c, y, x); }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return planes.at(c, y, x); }

    void clamp01() {
        for (auto& v : planes.data) v = std::clamp(v, 0.0, 1.0);
    }
    bool operator==(const RgbImage&) const = default;
};

/// Three masked RGB channels followed by alpha * SAR.
struct FusedImage {
    FeatureMap channels;
};

struct FeatureVector {
    std::vector<double> values;
};

inline RgbImage crop_fov(const RgbImage& img, const PixelRect& rect) {
    check_rect(rect, img.width(), img.height());
    RgbImage out(rect.width, rect.height);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t r = 0; r < rect.height; ++r)
            for (std::size_t x = 0; x < rect.width; ++x) out.at(c, r, x) = img.at(c, rect.y + r, rect.x + x);
    return out;
}

/// out[c] = sar * rgb[c] for the colour planes, out[3] = alpha * sar.
inline FusedImage mask_fuse(const Image& sar_norm, const RgbImage& rgb, double alpha) {
    if (sar_norm.width != rgb.width() || sar_norm.height != rgb.height())
        throw DomainError("mask_fuse: SAR and RGB rasters differ");
    for (double v : sar_norm.pixels)
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError("mask_fuse: SAR slice is not normalized to [0, 1]");
    const std::size_t n = sar_norm.pixels.size();
    FusedImage out{FeatureMap(4, sar_norm.height, sar_norm.width)};
    for (std::size_t c = 0; c < 3; ++c) {
        const double* src = rgb.planes.channel(c);
        double* dst = out.channels.channel(c);
        for (std::size_t i = 0; i < n; ++i) dst[i] = sar_norm.pixels[i] * src[i];
    }
    double* sar = out.channels.channel(3);
    for (std::size_t i = 0; i < n; ++i) sar[i] = alpha * sar_norm.pixels[i];
    return out;
}

/// Camera-modality dropout: with probability p the whole image is blanked.
inline RgbImage rgb_dropout(const RgbImage& rgb, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("rgb_dropout: p outside [0, 1]");
    Rng rng(seed);
    if (rng.bernoulli(p)) return RgbImage(rgb.width(), rgb.height(), 0.0);
    return rgb;
}

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 2, zero padding 1.

namespace detail {

inline std::size_t conv_out_size(std::size_t in) { return (in - 1) / 2 + 1; }

// Output indices o with 0 <= 2 o + k - 1 < in.
inline std::pair<std::size_t, std::size_t> conv_valid(std::size_t k, std::size_t in, std::size_t out) {
    const std::size_t lo = k == 0 ? 1 : 0;
    const std::size_t hi = in >= k ? std::min(out, (in - k) / 2 + 1) : 0;
    return {lo, std::max(lo, hi)};
}

}  // namespace detail

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Rows are (channel, ky, kx) taps, columns are output pixels.
inline RowMatrix im2col(const FeatureMap& in, std::size_t ho, std::size_t wo) {
    RowMatrix cols = RowMatrix::Zero(static_cast<Eigen::Index>(in.channels * 9), static_cast<Eigen::Index>(ho * wo));
    for (std::size_t ic = 0; ic < in.channels; ++ic) {
        const double* src = in.channel(ic);
        for (std::size_t ky = 0; ky < 3; ++ky) {
            const auto [ylo, yhi] = conv_valid(ky, in.height, ho);
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const auto [xlo, xhi] = conv_valid(kx, in.width, wo);
                double* row = cols.data() + ((ic * 3 + ky) * 3 + kx) * ho * wo;
                for (std::size_t oy = ylo; oy < yhi; ++oy) {
                    const double* s = src + (2 * oy + ky - 1) * in.width;
                    double* r = row + oy * wo;
                    for (std::size_t ox = xlo; ox < xhi; ++ox) r[ox] = s[2 * ox + kx - 1];
                }
            }
        }
    }
    return cols;
}

inline void col2im_add(const RowMatrix& cols, FeatureMap& out, std::size_t first_channel, std::size_t ho,
                       std::size_t wo) {
    for (std::size_t ic = first_channel; ic < out.channels; ++ic) {
        double* dst = out.channel(ic);
        for (std::size_t ky = 0; ky < 3; ++ky) {
            const auto [ylo, yhi] = conv_valid(ky, out.height, ho);
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const auto [xlo, xhi] = conv_valid(kx, out.width, wo);
                const double* row = cols.data() + (((ic - first_channel) * 3 + ky) * 3 + kx) * ho * wo;
                for (std::size_t oy = ylo; oy < yhi; ++oy) {
                    double* d = dst + (2 * oy + ky - 1) * out.width;
                    const double* r = row + oy * wo;
                    for (std::size_t ox = xlo; ox < xhi; ++ox) d[2 * ox + kx - 1] += r[ox];
                }
            }
        }
    }
}

}  // namespace detail

inline FeatureMap conv2d_s2(const FeatureMap& in, std::span<const double> weight, std::span<const double> bias,
                            std::size_t out_channels) {
    const std::size_t ho = detail::conv_out_size(in.height);
    const std::size_t wo = detail::conv_out_size(in.width);
    const auto k = static_cast<Eigen::Index>(in.channels * 9);
    const auto n = static_cast<Eigen::Index>(ho * wo);
    const auto m = static_cast<Eigen::Index>(out_channels);
    FeatureMap out(out_channels, ho, wo);
    const detail::RowMatrix cols = detail::im2col(in, ho, wo);
    Eigen::Map<const detail::RowMatrix> w(weight.data(), m, k);
    Eigen::Map<detail::RowMatrix> o(out.data.data(), m, n);
    o.noalias() = w * cols;
    for (Eigen::Index c = 0; c < m; ++c) o.row(c).array() += bias[static_cast<std::size_t>(c)];
    return out;
}

/// Accumulates dW, db and, when d_in is non-null, dInput for input channels
/// from first_input_channel onwards.
inline void conv2d_s2_backward(const FeatureMap& in, std::span<const double> weight, const FeatureMap& d_out,
                               std::span<double> d_weight, std::span<double> d_bias, FeatureMap* d_in,
                               std::size_t first_input_channel = 0) {
    const std::size_t ho = d_out.height;
    const std::size_t wo = d_out.width;
    const auto k = static_cast<Eigen::Index>(in.channels * 9);
    const auto n = static_cast<Eigen::Index>(ho * wo);
    const auto m = static_cast<Eigen::Index>(d_out.channels);
    Eigen::Map<const detail::RowMatrix> g(d_out.data.data(), m, n);
    Eigen::Map<detail::RowMatrix> dw(d_weight.data(), m, k);
    Eigen::Map<Eigen::VectorXd> db(d_bias.data(), m);
    // Plain loop: Eigen's vectorized reductions peel by address alignment,
    // which would make the summation order depend on the allocator.
    for (Eigen::Index c = 0; c < m; ++c) {
        const double* row = d_out.data.data() + c * n;
        double s = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) s += row[i];
        db[c] += s;
    }
    const detail::RowMatrix cols = detail::im2col(in, ho, wo);
    dw.noalias() += g * cols.transpose();
    if (d_in == nullptr || first_input_channel >= in.channels) return;
    const auto skip = static_cast<Eigen::Index>(first_input_channel * 9);
    Eigen::Map<const detail::RowMatrix> w(weight.data(), m, k);
    const detail::RowMatrix d_cols = w.rightCols(k - skip).transpose() * g;
    detail::col2im_add(d_cols, *d_in, first_input_channel, ho, wo);
}

/// Activations recorded by cnn_forward for the backward pass.
struct CnnCache {
    std::vector<FeatureMap> inputs;       // input to each conv layer
    std::vector<FeatureMap> activations;  // post-ReLU output of each layer
};

inline void check_params_finite(const ModelParams& params) {
    if (!params.finite()) throw NumericError("model parameters contain NaN or Inf");
}

/// Conv + ReLU stack; returns the terminal feature map.
inline FeatureMap cnn_forward(const FusedImage& fused, const ModelParams& params, CnnCache* cache = nullptr) {
    check_params_finite(params);
    if (fused.channels.channels != params.config().input_channels)
        throw DomainError("cnn_forward: fused image channel count mismatch");
    FeatureMap x = fused.channels;
    if (cache != nullptr) {
        cache->inputs.clear();
        cache->activations.clear();
    }
    for (const auto& layer : params.conv()) {
        FeatureMap y = conv2d_s2(x, params.view(layer.weight), params.view(layer.bias), layer.out);
        for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
        if (cache != nullptr) {
            cache->inputs.push_back(std::move(x));
            cache->activations.push_back(y);
        }
        x = std::move(y);
    }
    if (!all_finite(x.data)) throw NumericError("cnn_forward: non-finite activation");
    return x;
}

/// Backpropagates d(terminal map) to the conv parameters; returns the
/// gradient with respect to the SAR channel of the fused input only (the
/// colour channels are data and never need a gradient).
inline FeatureMap cnn_backward(const CnnCache& cache, const ModelParams& params, FeatureMap d_top,
                               std::span<double> grads) {
    const auto& layers = params.conv();
    for (std::size_t l = layers.size(); l-- > 0;) {
        const auto& layer = layers[l];
        const FeatureMap& act = cache.activations[l];
        for (std::size_t i = 0; i < d_top.data.size(); ++i)
            if (act.data[i] <= 0.0) d_top.data[i] = 0.0;
        const FeatureMap& in = cache.inputs[l];
        FeatureMap d_in(in.channels, in.height, in.width);
        const std::size_t first = l == 0 ? 3 : 0;
        conv2d_s2_backward(in, params.view(layer.weight), d_top, grads.subspan(layer.weight.offset, layer.weight.size),
                           grads.subspan(layer.bias.offset, layer.bias.size), &d_in, first);
        d_top = std::move(d_in);
    }
    return d_top;
}

/// Spatial mean per channel.
inline FeatureVector gap(const FeatureMap& fm) {
    if (fm.height == 0 || fm.width == 0) throw DomainError("gap: empty feature map");
    FeatureVector out{std::vector<double>(fm.channels)};
    const double inv = 1.0 / static_cast<double>(fm.plane());
    for (std::size_t c = 0; c < fm.channels; ++c) {
        const double* p = fm.channel(c);
        double s = 0.0;
        for (std::size_t i = 0; i < fm.plane(); ++i) s += p[i];
        out.values[c] = s * inv;
    }
    return out;
}

inline FeatureMap gap_backward(std::span<const double> d_vec, std::size_t channels, std::size_t height,
                               std::size_t width) {
    FeatureMap d(channels, height, width);
    const double inv = 1.0 / static_cast<double>(height * width);
    for (std::size_t c = 0; c < channels; ++c) std::fill(d.channel(c), d.channel(c) + d.plane(), d_vec[c] * inv);
    return d;
}

/// Class activation map: channel-weighted sum of the terminal feature map,
/// normalized to [0, 1].
inline Image cam_raw(const FeatureMap& fm, std::span<const double> class_weights) {
    if (class_weights.size() != fm.channels) throw DomainError("cam: weight count differs from channel count");
    Image heat(fm.width, fm.height);
    for (std::size_t c = 0; c < fm.channels; ++c) {
        const double* p = fm.channel(c);
        for (std::size_t i = 0; i < fm.plane(); ++i) heat.pixels[i] += class_weights[c] * p[i];
    }
    return heat;
}

inline Image cam(const FeatureMap& fm, std::span<const double> class_weights) {
    return normalize01(cam_raw(fm, class_weights));
}

}  // namespace hydra
