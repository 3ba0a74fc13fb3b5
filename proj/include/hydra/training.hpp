#pragma once

// Synthetic wet/dry plant corpus, augmentation, two-phase SGD training,
// evaluation and repeated stratified k-fold cross-validation.

#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "hydra/common.hpp"
#include "hydra/encoder.hpp"
#include "hydra/fusion.hpp"
#include "hydra/model.hpp"
#include "hydra/params.hpp"
#include "hydra/recon.hpp"
#include "hydra/scene.hpp"

namespace hydra {

/// Synthetic RGB camera. The camera frame is larger than the SAR field of
/// view by a margin; the calibration rectangle crops it back.
struct CameraParams {
    std::size_t margin_left = 7;
    std::size_t margin_top = 5;
    std::size_t margin_right = 5;
    std::size_t margin_bottom = 4;
    double droplet_density = 0.3;   // droplets per leaf pixel on wet leaves
    double noise = 0.03;
};

/// Desk-scale scanner: 32 x 24 positions at 1.8 mm (about half a wavelength).
inline ScanGeometry desk_geometry() {
    ScanGeometry g = ScanGeometry::uniform(32, 24, 1.8, 1.8);
    g.delta_T = 2.0;
    return g;
}

struct DatasetConfig {
    RadarConfig radar = RadarConfig::iwr1642(32);
    ScanGeometry geometry = desk_geometry();
    double z_min = 200.0;
    double z_max = 480.0;
    double z_step = 40.0;
    PlantParams plant;
    CameraParams camera;
    unsigned threads = 1;

    std::vector<double> depths() const {
        const std::size_t n = depth_count(z_min, z_max, z_step);
        std::vector<double> z(n);
        for (std::size_t i = 0; i < n; ++i) z[i] = z_min + static_cast<double>(i) * z_step;
        return z;
    }

    /// Crop that maps the camera frame onto the SAR raster.
    PixelRect calibration() const {
        const auto g = PixelGrid::for_geometry(geometry);
        return {camera.margin_left, camera.margin_top, g.width, g.height};
    }
};

struct SampleMeta {
    std::uint64_t scene_seed = 0;
    double wind_mm = 0.0;
    double lighting = 1.0;
    bool rgb_dropped = false;
};

/// One labelled observation. `raw` is the compensated cube the stack was
/// reconstructed from, kept so wind can be applied before reconstruction.
struct Sample {
    RawDataCube raw{ScanGeometry{}, RadarConfig::iwr1642()};
    DepthStack stack;  // jointly normalized to [0, 1]
    RgbImage rgb;      // aligned with the SAR raster
    Wetness label = Wetness::Dry;
    SampleMeta meta;

    ModelInput input() const {
        ModelInput in;
        for (const auto& s : stack.slices) {
            in.depths.push_back(s.z0);
            in.sar.push_back(&s.image);
        }
        in.rgb = &rgb;
        return in;
    }
};

namespace detail {

struct Colour {
    double r, g, b;
};

inline void put(RgbImage& img, std::size_t row, std::size_t col, Colour c) {
    img.at(0, row, col) = c.r;
    img.at(1, row, col) = c.g;
    img.at(2, row, col) = c.b;
}

inline bool inside_leaf(const Leaf& leaf, double x, double y) {
    const double dx = x - leaf.cx;
    const double dy = y - leaf.cy;
    const double ca = std::cos(leaf.angle);
    const double sa = std::sin(leaf.angle);
    const double u = (ca * dx + sa * dy) / leaf.half_length;
    const double v = (-sa * dx + ca * dy) / leaf.half_width;
    return u * u + v * v <= 1.0;
}

}  // namespace detail

/// Full camera frame of a plant: soil, pot rim, leaves (far to near), and
/// specular droplets on wet foliage.
inline RgbImage render_camera(const Plant& plant, const DatasetConfig& cfg, std::uint64_t seed) {
    const auto grid = PixelGrid::for_geometry(cfg.geometry);
    const auto& cam = cfg.camera;
    const std::size_t W = grid.width + cam.margin_left + cam.margin_right;
    const std::size_t H = grid.height + cam.margin_top + cam.margin_bottom;
    RgbImage img(W, H);
    Rng rng(seed);
    auto px_x = [&](std::size_t col) {
        return grid.x0 + (static_cast<double>(col) - static_cast<double>(cam.margin_left)) * grid.dx;
    };
    auto px_y = [&](std::size_t row) {
        return grid.y0 + (static_cast<double>(row) - static_cast<double>(cam.margin_top)) * grid.dy;
    };

    std::vector<std::size_t> order(plant.leaves.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return plant.leaves[a].depth > plant.leaves[b].depth; });

    std::vector<int> owner(W * H, -1);
    const auto& pp = cfg.plant;
    for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < W; ++c) {
            const double x = px_x(c);
            const double y = px_y(r);
            const double n = cam.noise * rng.normal();
            detail::Colour col{0.36 + n, 0.27 + n, 0.17 + n};
            if (std::abs(y - pp.pot_y) < 2.0 && std::abs(x) < pp.pot_half_width) col = {0.62 + n, 0.33 + n, 0.2 + n};
            for (std::size_t li : order) {
                const Leaf& leaf = plant.leaves[li];
                if (!detail::inside_leaf(leaf, x, y)) continue;
                const double shade = 1.15 - 0.5 * (leaf.depth - pp.depth_min) / (pp.depth_max - pp.depth_min);
                col = {0.18 * shade + n, 0.52 * shade + n, 0.14 * shade + n};
                owner[r * W + c] = static_cast<int>(li);
            }
            detail::put(img, r, c, col);
        }
    }

    if (plant.scene.label == Wetness::Wet) {
        std::vector<std::size_t> leaf_pixels;
        for (std::size_t i = 0; i < owner.size(); ++i)
            if (owner[i] >= 0) leaf_pixels.push_back(i);
        const auto drops = static_cast<std::size_t>(std::round(cam.droplet_density * static_cast<double>(leaf_pixels.size())));
        for (std::size_t d = 0; d < drops && !leaf_pixels.empty(); ++d) {
            const std::size_t idx = leaf_pixels[rng.next() % leaf_pixels.size()];
            const std::size_t r = idx / W;
            const std::size_t c = idx % W;
            const double b = rng.uniform(0.85, 1.0);
            detail::put(img, r, c, {b, b, b});
            // Soft halo on the four neighbours.
            const long dr[4] = {-1, 1, 0, 0};
            const long dc[4] = {0, 0, -1, 1};
            for (int k = 0; k < 4; ++k) {
                const long rr = static_cast<long>(r) + dr[k];
                const long cc = static_cast<long>(c) + dc[k];
                if (rr < 0 || cc < 0 || rr >= static_cast<long>(H) || cc >= static_cast<long>(W)) continue;
                if (owner[static_cast<std::size_t>(rr) * W + static_cast<std::size_t>(cc)] < 0) continue;
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    double& v = img.at(ch, static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
                    v = 0.5 * (v + 0.8 * b);
                }
            }
        }
    }
    img.clamp01();
    return img;
}

/// Simulates, compensates, reconstructs and renders one plant.
inline Sample make_sample(Wetness label, std::uint64_t scene_seed, const DatasetConfig& cfg,
                          const FocusingFilters& filters) {
    const Plant plant = make_plant(label, derive_seed(scene_seed, 0), cfg.plant);
    Sample s;
    s.label = label;
    s.meta.scene_seed = scene_seed;
    s.raw = phase_compensate(simulate_scan(plant.scene, cfg.geometry, cfg.radar));
    s.stack = normalize_stack(depth_stack(s.raw, filters));
    s.rgb = crop_fov(render_camera(plant, cfg, derive_seed(scene_seed, 1)), cfg.calibration());
    return s;
}

inline std::shared_ptr<const FocusingFilters> make_filters(const DatasetConfig& cfg) {
    return std::make_shared<const FocusingFilters>(cfg.geometry, cfg.radar, cfg.depths());
}

/// n/2 dry then wet scenes interleaved (even index dry), deterministic per seed.
inline std::vector<Sample> synth_dataset(std::size_t n, const DatasetConfig& cfg, std::uint64_t seed,
                                         const FocusingFilters* filters = nullptr) {
    if (n < 2 || n % 2 != 0) throw DomainError("synth_dataset: n must be even and >= 2");
    std::shared_ptr<const FocusingFilters> own;
    if (filters == nullptr) {
        own = make_filters(cfg);
        filters = own.get();
    }
    std::vector<Sample> out(n);
    parallel_for(n, cfg.threads, [&](std::size_t i) {
        const Wetness w = i % 2 == 0 ? Wetness::Dry : Wetness::Wet;
        out[i] = make_sample(w, derive_seed(seed, i), cfg, *filters);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation.

/// Default-constructed policy is the identity.
struct AugmentPolicy {
    double rgb_dropout = 0.0;
    double lighting_min = 1.0;
    double lighting_max = 1.0;
    double wind_max_mm = 0.0;   // amplitude drawn from U[0, wind_max_mm]
    double wind_prob = 1.0;     // probability that wind is applied at all

    static AugmentPolicy standard() { return {0.2, 0.4, 1.2, 2.0, 0.5}; }

    void validate() const {
        if (!(rgb_dropout >= 0.0 && rgb_dropout <= 1.0)) throw ConfigError("augment: rgb_dropout outside [0, 1]");
        if (!(lighting_min >= 0.0 && lighting_min <= lighting_max)) throw ConfigError("augment: bad lighting range");
        if (!(wind_max_mm >= 0.0)) throw ConfigError("augment: wind amplitude < 0");
        if (!(wind_prob >= 0.0 && wind_prob <= 1.0)) throw ConfigError("augment: wind_prob outside [0, 1]");
    }
    bool is_null() const {
        return rgb_dropout == 0.0 && lighting_min == 1.0 && lighting_max == 1.0 && wind_max_mm == 0.0;
    }
};

inline RgbImage apply_lighting(const RgbImage& rgb, double factor) {
    if (factor == 1.0) return rgb;
    RgbImage out = rgb;
    for (auto& v : out.planes.data) v *= factor;
    out.clamp01();
    return out;
}

/// Re-reconstructs after applying `amplitude_mm` of wind to the stored cube.
inline Sample apply_wind(const Sample& s, double amplitude_mm, std::uint64_t seed, const FocusingFilters& filters) {
    Sample out = s;
    out.meta.wind_mm = amplitude_mm;
    if (amplitude_mm == 0.0) return out;
    out.raw = wind_perturb(s.raw, amplitude_mm, seed);
    out.stack = normalize_stack(depth_stack(out.raw, filters));
    return out;
}

/// Dropout, lighting and wind, each from its own seeded stream.
inline Sample augment(const Sample& s, const AugmentPolicy& policy, std::uint64_t seed,
                      const FocusingFilters* filters = nullptr) {
    policy.validate();
    Sample out = s;
    Rng drop_rng(derive_seed(seed, 0));
    Rng light_rng(derive_seed(seed, 1));
    Rng wind_rng(derive_seed(seed, 2));

    if (drop_rng.bernoulli(policy.rgb_dropout)) {
        out.rgb = RgbImage(s.rgb.width(), s.rgb.height(), 0.0);
        out.meta.rgb_dropped = true;
    }
    if (policy.lighting_max > policy.lighting_min || policy.lighting_min != 1.0) {
        const double f = light_rng.uniform(policy.lighting_min, policy.lighting_max);
        out.rgb = apply_lighting(out.rgb, f);
        out.meta.lighting = s.meta.lighting * f;
    }
    if (policy.wind_max_mm > 0.0 && wind_rng.bernoulli(policy.wind_prob)) {
        const double a = wind_rng.uniform(0.0, policy.wind_max_mm);
        std::unique_ptr<FocusingFilters> own;
        if (filters == nullptr) {
            std::vector<double> z;
            for (const auto& sl : s.stack.slices) z.push_back(sl.z0);
            own = std::make_unique<FocusingFilters>(s.raw.geometry, s.raw.cfg, z);
            filters = own.get();
        }
        Sample w = apply_wind(out, a, wind_rng.next(), *filters);
        out.raw = std::move(w.raw);
        out.stack = std::move(w.stack);
        out.meta.wind_mm = a;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainHyper {
    ModelConfig model;
    AugmentPolicy augment = AugmentPolicy::standard();
    double pretrain_lr = 0.1;   // phase 1
    double lr = 0.02;           // phase 2
    double momentum = 0.9;
    // alpha scales a whole input plane, so its gradient sums over every
    // pixel; this multiplier keeps its steps comparable to a single weight's.
    double alpha_lr_scale = 0.01;
    std::size_t phase1_epochs = 30;
    std::size_t phase2_epochs = 24;
    std::size_t batch_size = 16;
    double clip_norm = 1.0;  // 0 disables clipping
    bool cosine_decay = true;
    std::size_t warmup_epochs = 2;  // linear ramp from zero at the start of each phase
    std::uint64_t seed = 1;
    unsigned threads = 1;

    void validate() const {
        model.validate();
        augment.validate();
        if (!(lr >= 0.0) || !(pretrain_lr >= 0.0) || !(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: need lr >= 0, 0 <= momentum < 1");
        if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
        if (phase2_epochs == 0 && phase1_epochs == 0) throw ConfigError("train: no epochs requested");
        if (!(clip_norm >= 0.0)) throw ConfigError("train: clip_norm < 0");
        if (!(alpha_lr_scale >= 0.0)) throw ConfigError("train: alpha_lr_scale < 0");
    }
};

struct EpochRecord {
    int phase = 0;
    std::size_t epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

// Per-sample forward + backward; returns the prediction. d_prob uses the
// batch-mean cross-entropy gradient.
inline double sample_step(const Sample& s, int phase, std::size_t slice, const ModelParams& params,
                          std::size_t batch, std::span<double> grads) {
    ForwardCache cache;
    const double y = s.label == Wetness::Wet ? 1.0 : 0.0;
    double p = 0.0;
    if (phase == 1)
        p = probe_forward(s.stack.slices[slice].image, s.rgb, params, &cache);
    else
        p = model_forward(s.input(), params, &cache);
    const double d = (p - y) / (static_cast<double>(batch) * p * (1.0 - p));
    // Step on the unclamped loss: a saturated wrong prediction would
    // otherwise get a zero gradient and never recover.
    cache.encoder.clamped = false;
    if (phase == 1)
        probe_backward(d, params, cache, grads);
    else
        model_backward(d, params, cache, grads);
    return p;
}

// Linear warm-up, then either constant or cosine decay to zero by the end
// of the phase, so training ends on settled weights.
inline double scheduled_lr(double base, std::size_t step, std::size_t warmup, std::size_t total, bool cosine) {
    if (step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (!cosine || total <= warmup) return base;
    const double t = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return base * 0.5 * (1.0 + std::cos(kPi * t));
}

}  // namespace detail

/// Phase-1 slice choice, drawn in proportion to each slice's mean
/// brightness so that empty depths are rarely used as probe examples.
inline std::size_t pick_slice(const DepthStack& stack, Rng& rng) {
    std::vector<double> w;
    double total = 0.0;
    for (const auto& sl : stack.slices) {
        double m = 0.0;
        for (double v : sl.image.pixels) m += v;
        w.push_back(m);
        total += m;
    }
    if (!(total > 0.0)) return rng.next() % stack.size();
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (u < w[i]) return i;
        u -= w[i];
    }
    return w.size() - 1;
}

/// Data-dependent initialization: rescales each conv layer in turn so that
/// its post-ReLU activations on a few training samples have mean square 1/2;
/// for the last layer the target is the pooled feature vector, which puts
/// features on the same scale as the depth encoding. Requires zero conv
/// biases, which init_params guarantees.
inline void calibrate_conv_scale(ModelParams& params, const std::vector<Sample>& data, std::size_t max_samples = 16) {
    const std::size_t n = std::min(max_samples, data.size());
    std::vector<FusedImage> inputs;
    const double alpha = *params.value(params.alpha());
    for (std::size_t i = 0; i < n; ++i)
        for (const auto& sl : data[i].stack.slices)
            inputs.push_back(detail::fuse_for(sl.image, data[i].rgb, alpha, params.config().modality));
    for (std::size_t l = 0; l < params.conv().size(); ++l) {
        double ms = 0.0;
        std::size_t count = 0;
        const bool last = l + 1 == params.conv().size();
        for (const auto& f : inputs) {
            CnnCache cache;
            cnn_forward(f, params, &cache);
            const auto& act = cache.activations[l];
            if (last) {
                for (double v : gap(act).values) ms += v * v;
                count += act.channels;
            } else {
                for (double v : act.data) ms += v * v;
                count += act.data.size();
            }
        }
        ms /= static_cast<double>(std::max<std::size_t>(count, 1));
        if (!(ms > 0.0)) continue;
        const double scale = std::sqrt(0.5 / ms);
        for (auto& w : params.view(params.conv()[l].weight)) w *= scale;
    }
}

/// Channel variances below this fraction of the mean variance are raised
/// to it before whitening, so near-constant channels get a bounded gain.
inline constexpr double kEmbedVarianceFloor = 0.1;

/// Sets the embedding to centre each pooled channel over the calibration
/// slices and scale it to unit (floored) variance.

inline void calibrate_embedding(ModelParams& params, const std::vector<Sample>& data, std::size_t max_samples = 16) {
    const std::size_t d = params.config().d_model();
    const std::size_t n = std::min(max_samples, data.size());
    const double alpha = *params.value(params.alpha());
    std::vector<double> sum(d, 0.0), sq(d, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (const auto& sl : data[i].stack.slices) {
            const auto f = gap(cnn_forward(detail::fuse_for(sl.image, data[i].rgb, alpha, params.config().modality), params));
            for (std::size_t c = 0; c < d; ++c) {
                sum[c] += f.values[c];
                sq[c] += f.values[c] * f.values[c];
            }
            ++count;
        }
    if (count == 0) return;
    // Per-channel gains, but with the variance floored at a fraction of the
    // mean: channels that barely respond on the calibration set would
    // otherwise get huge gains, and with them the gradients of the conv
    // weights feeding those channels.
    std::vector<double> mean(d), var(d);
    double var_mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
        mean[c] = sum[c] / static_cast<double>(count);
        var[c] = std::max(0.0, sq[c] / static_cast<double>(count) - mean[c] * mean[c]);
        var_mean += var[c] / static_cast<double>(d);
    }
    double* w = params.value(params.embed_weight());
    double* b = params.value(params.embed_bias());
    std::fill(w, w + d * d, 0.0);
    for (std::size_t c = 0; c < d; ++c) {
        const double v = std::max(var[c], kEmbedVarianceFloor * var_mean);
        const double gain = v > 1e-12 ? 1.0 / std::sqrt(v) : 1.0;
        w[c * d + c] = gain;
        b[c] = -gain * mean[c];
    }
}

/// Seeded initialization followed by the data-dependent calibrations; the
/// point training starts from.
inline ModelParams initial_params(const std::vector<Sample>& data, const TrainHyper& hyper) {
    if (data.empty()) throw DomainError("train: empty dataset");
    ModelParams params = init_params(hyper.model, derive_seed(hyper.seed, 1));
    calibrate_conv_scale(params, data);
    calibrate_embedding(params, data);
    return params;
}

/// Phase 1 pretrains the extractor with the per-slice probe on one random
/// slice per sample; phase 2 trains the whole network from those weights.
inline TrainResult train(const std::vector<Sample>& data, const TrainHyper& hyper,
                         const FocusingFilters* filters = nullptr, const EpochCallback& on_epoch = {}) {
    hyper.validate();
    if (data.empty()) throw DomainError("train: empty dataset");
    std::shared_ptr<const FocusingFilters> own;
    if (filters == nullptr && hyper.augment.wind_max_mm > 0.0) {
        std::vector<double> z;
        for (const auto& sl : data.front().stack.slices) z.push_back(sl.z0);
        own = std::make_shared<const FocusingFilters>(data.front().raw.geometry, data.front().raw.cfg, z);
        filters = own.get();
    }

    TrainResult result{initial_params(data, hyper), {}};
    ModelParams& params = result.params;
    const std::size_t P = params.size();
    std::vector<double> velocity(P, 0.0);
    std::vector<std::vector<double>> sample_grads;

    for (int phase = 1; phase <= 2; ++phase) {
        const std::size_t epochs = phase == 1 ? hyper.phase1_epochs : hyper.phase2_epochs;
        const double base_lr = phase == 1 ? hyper.pretrain_lr : hyper.lr;
        const std::size_t batches = (data.size() + hyper.batch_size - 1) / hyper.batch_size;
        const std::size_t total_steps = epochs * batches;
        const std::size_t warmup_steps = std::min(hyper.warmup_epochs, epochs) * batches;
        std::size_t step_index = 0;
        std::fill(velocity.begin(), velocity.end(), 0.0);
        for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
            const std::uint64_t epoch_seed = derive_seed(derive_seed(hyper.seed, 100 + phase), epoch);
            std::vector<std::size_t> order(data.size());
            std::iota(order.begin(), order.end(), 0);
            Rng order_rng(epoch_seed);
            order_rng.shuffle(order);

            double loss_sum = 0.0;
            std::size_t correct = 0;
            for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
                const std::size_t B = std::min(hyper.batch_size, order.size() - start);
                sample_grads.assign(B, std::vector<double>(P, 0.0));
                LossBatch batch;
                batch.labels.resize(B);
                batch.predictions.resize(B);
                parallel_for(B, hyper.threads, [&](std::size_t b) {
                    const std::size_t idx = order[start + b];
                    const std::uint64_t s_seed = derive_seed(epoch_seed, 1 + start + b);
                    const Sample aug = augment(data[idx], hyper.augment, s_seed, filters);
                    Rng slice_rng(derive_seed(s_seed, 7));
                    const std::size_t slice = pick_slice(aug.stack, slice_rng);
                    batch.labels[b] = aug.label == Wetness::Wet ? 1.0 : 0.0;
                    batch.predictions[b] = detail::sample_step(aug, phase, slice, params, B, sample_grads[b]);
                });
                const LossResult loss = bce_loss(batch);
                if (!std::isfinite(loss.loss))
                    throw NumericError("training diverged: non-finite loss in phase " + std::to_string(phase) +
                                       ", epoch " + std::to_string(epoch));
                loss_sum += loss.loss * static_cast<double>(B);
                for (std::size_t b = 0; b < B; ++b)
                    correct += (batch.predictions[b] >= 0.5) == (batch.labels[b] == 1.0) ? 1 : 0;

                params.zero_grad();
                for (const auto& g : sample_grads)
                    for (std::size_t i = 0; i < P; ++i) params.grads[i] += g[i];
                if (!all_finite(params.grads)) throw NumericError("training diverged: non-finite gradient");
                double scale = 1.0;
                if (hyper.clip_norm > 0.0) {
                    double n2 = 0.0;
                    for (double g : params.grads) n2 += g * g;
                    const double norm = std::sqrt(n2);
                    if (norm > hyper.clip_norm) scale = hyper.clip_norm / norm;
                }
                const double lr = detail::scheduled_lr(base_lr, step_index++, warmup_steps, total_steps, hyper.cosine_decay);
                const std::size_t alpha_at = params.alpha().offset;
                for (std::size_t i = 0; i < P; ++i) {
                    const double step = i == alpha_at ? lr * hyper.alpha_lr_scale : lr;
                    velocity[i] = hyper.momentum * velocity[i] - step * scale * params.grads[i];
                    params.values[i] += velocity[i];
                }
                if (!params.finite()) throw NumericError("training diverged: non-finite parameters");
            }
            EpochRecord rec{phase, epoch, loss_sum / static_cast<double>(data.size()),
                            static_cast<double>(correct) / static_cast<double>(data.size())};
            result.history.push_back(rec);
            if (on_epoch) on_epoch(rec);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct Metrics {
    std::size_t tp = 0;  // wet predicted wet
    std::size_t tn = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    double accuracy = 0.0;

    std::size_t total() const { return tp + tn + fp + fn; }
};

/// Evaluation-time perturbations.
struct EvalConditions {
    bool rgb_blackout = false;
    double wind_mm = 0.0;
    std::uint64_t seed = 0;
};

inline std::vector<double> predict(const ModelParams& params, const std::vector<Sample>& samples,
                                   const EvalConditions& cond = {}, const FocusingFilters* filters = nullptr,
                                   unsigned threads = 1) {
    if (samples.empty()) throw DomainError("evaluate: empty sample list");
    std::shared_ptr<const FocusingFilters> own;
    if (filters == nullptr && cond.wind_mm > 0.0) {
        std::vector<double> z;
        for (const auto& sl : samples.front().stack.slices) z.push_back(sl.z0);
        own = std::make_shared<const FocusingFilters>(samples.front().raw.geometry, samples.front().raw.cfg, z);
        filters = own.get();
    }
    std::vector<double> out(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        const Sample* s = &samples[i];
        Sample tmp;
        if (cond.wind_mm > 0.0) {
            tmp = apply_wind(*s, cond.wind_mm, derive_seed(cond.seed, i), *filters);
            s = &tmp;
        }
        if (cond.rgb_blackout) {
            if (s != &tmp) tmp = *s;
            tmp.rgb = RgbImage(s->rgb.width(), s->rgb.height(), 0.0);
            s = &tmp;
        }
        out[i] = model_forward(s->input(), params);
    });
    return out;
}

inline Metrics confusion(const std::vector<double>& predictions, const std::vector<Wetness>& labels) {
    if (predictions.empty() || predictions.size() != labels.size())
        throw DomainError("evaluate: empty or mismatched predictions");
    Metrics m;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool wet = predictions[i] >= 0.5;
        if (labels[i] == Wetness::Wet)
            ++(wet ? m.tp : m.fn);
        else
            ++(wet ? m.fp : m.tn);
    }
    m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.total());
    return m;
}

/// Threshold P(wet) at 0.5.
inline Metrics evaluate(const ModelParams& params, const std::vector<Sample>& samples,
                        const EvalConditions& cond = {}, const FocusingFilters* filters = nullptr,
                        unsigned threads = 1) {
    const auto p = predict(params, samples, cond, filters, threads);
    std::vector<Wetness> labels;
    for (const auto& s : samples) labels.push_back(s.label);
    return confusion(p, labels);
}

// ---------------------------------------------------------------------------
// Cross-validation.

struct FoldPlan {
    std::size_t k = 5;
    std::size_t repeats = 1;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::size_t>> assignments;  // [repeat][sample] -> fold

    std::vector<std::size_t> members(std::size_t repeat, std::size_t fold, bool held_out) const {
        std::vector<std::size_t> out;
        const auto& a = assignments.at(repeat);
        for (std::size_t i = 0; i < a.size(); ++i)
            if ((a[i] == fold) == held_out) out.push_back(i);
        return out;
    }
};

/// Per repeat: shuffle each class, lay dry then wet end to end, and deal
/// fold numbers round-robin. Every training partition must hold both classes.
inline FoldPlan make_fold_plan(const std::vector<Wetness>& labels, std::size_t k, std::size_t repeats,
                               std::uint64_t seed) {
    if (k < 2) throw DomainError("kfold: k must be >= 2");
    if (labels.size() < k) throw DomainError("kfold: dataset smaller than k");
    if (repeats == 0) throw DomainError("kfold: repeats must be >= 1");
    FoldPlan plan{k, repeats, seed, {}};
    std::vector<std::size_t> dry, wet;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == Wetness::Wet ? wet : dry).push_back(i);
    for (std::size_t r = 0; r < repeats; ++r) {
        Rng rng(derive_seed(seed, r));
        auto d = dry;
        auto w = wet;
        rng.shuffle(d);
        rng.shuffle(w);
        std::vector<std::size_t> assign(labels.size());
        std::size_t pos = 0;
        for (auto i : d) assign[i] = pos++ % k;
        for (auto i : w) assign[i] = pos++ % k;
        for (std::size_t f = 0; f < k; ++f) {
            bool has_dry = false, has_wet = false;
            for (std::size_t i = 0; i < labels.size(); ++i)
                if (assign[i] != f) (labels[i] == Wetness::Wet ? has_wet : has_dry) = true;
            if (!has_dry || !has_wet)
                throw StratificationError("kfold: fold " + std::to_string(f) + " leaves a class out of training");
        }
        plan.assignments.push_back(std::move(assign));
    }
    return plan;
}

struct FoldResult {
    std::size_t repeat = 0;
    std::size_t fold = 0;
    Metrics metrics;
};

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation
    std::size_t count = 0;
};

inline Aggregate aggregate(const std::vector<double>& xs) {
    if (xs.empty()) throw DomainError("aggregate: no values");
    Aggregate a;
    a.count = xs.size();
    a.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - a.mean) * (x - a.mean);
        a.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return a;
}

/// "96.21% ± 2.57%".
inline std::string format_percent(const Aggregate& a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f%% ± %.2f%%", 100.0 * a.mean, 100.0 * a.stddev);
    return buf;
}

struct CvResult {
    std::vector<FoldResult> folds;
    Aggregate accuracy;
};

using FoldCallback = std::function<void(const FoldResult&)>;

inline std::vector<Sample> subset(const std::vector<Sample>& data, const std::vector<std::size_t>& idx) {
    std::vector<Sample> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(data[i]);
    return out;
}

inline CvResult kfold_cv(const std::vector<Sample>& data, std::size_t k, std::size_t repeats,
                         const TrainHyper& hyper, std::uint64_t seed, const FocusingFilters* filters = nullptr,
                         const FoldCallback& on_fold = {}) {
    std::vector<Wetness> labels;
    for (const auto& s : data) labels.push_back(s.label);
    const FoldPlan plan = make_fold_plan(labels, k, repeats, seed);
    CvResult out;
    std::vector<double> acc;
    for (std::size_t r = 0; r < repeats; ++r)
        for (std::size_t f = 0; f < k; ++f) {
            TrainHyper h = hyper;
            h.seed = derive_seed(hyper.seed, r * k + f);
            const auto trained = train(subset(data, plan.members(r, f, false)), h, filters);
            FoldResult fr{r, f, evaluate(trained.params, subset(data, plan.members(r, f, true)), {}, filters,
                                         hyper.threads)};
            acc.push_back(fr.metrics.accuracy);
            out.folds.push_back(fr);
            if (on_fold) on_fold(fr);
        }
    out.accuracy = aggregate(acc);
    return out;
}

}  // namespace hydra
