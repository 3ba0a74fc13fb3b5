#pragma once

// Depth-sliced range migration imaging of a compensated raw cube.
//
// Per frequency the aperture data is zero-padded to twice its size and
// transformed to (k_x, k_y). Each slice multiplies by the plane-wave focusing
// term exp(+j k_z z0), k_z = sqrt(4k^2 - k_x^2 - k_y^2), drops evanescent bins,
// sums the frequencies coherently, upsamples the spectrum by two and inverse
// transforms. The output raster covers the aperture extent at half the scan
// pitch.

#include <algorithm>
#include <cmath>
#include <vector>

#include "hydra/common.hpp"
#include "hydra/fft.hpp"
#include "hydra/radar.hpp"
#include "hydra/scene.hpp"

namespace hydra {

/// Real raster, row-major (row = y, column = x).
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), pixels(w * h, fill) {}

    double& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
    double at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
    bool operator==(const Image&) const = default;
};

struct ComplexImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<cdouble> pixels;

    ComplexImage() = default;
    ComplexImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h) {}

    cdouble& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
    const cdouble& at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }

    Image magnitude() const {
        Image out(width, height);
        for (std::size_t i = 0; i < pixels.size(); ++i) out.pixels[i] = std::abs(pixels[i]);
        return out;
    }
};

/// Physical bounds of pixel centres, mm.
struct Extent {
    double x_min = 0.0;
    double x_max = 0.0;
    double y_min = 0.0;
    double y_max = 0.0;
};

struct SarSlice {
    Image image;
    double z0 = 0.0;
    Extent extent;
};

struct DepthStack {
    std::vector<SarSlice> slices;
    double z_min = 0.0;
    double z_max = 0.0;
    double step = 1.0;

    std::size_t size() const { return slices.size(); }
};

/// Mapping between output pixels and aperture coordinates.
struct PixelGrid {
    std::size_t width = 0;
    std::size_t height = 0;
    double x0 = 0.0;
    double y0 = 0.0;
    double dx = 0.0;  // pixel pitch, half the scan pitch
    double dy = 0.0;

    static PixelGrid for_geometry(const ScanGeometry& g) {
        return {2 * g.nx(), 2 * g.ny(), g.x_positions.front(), g.y_positions.front(), 0.5 * g.pitch_x(),
                0.5 * g.pitch_y()};
    }
    double x(std::size_t col) const { return x0 + static_cast<double>(col) * dx; }
    double y(std::size_t row) const { return y0 + static_cast<double>(row) * dy; }
    Extent extent() const { return {x(0), x(width - 1), y(0), y(height - 1)}; }
};

namespace detail {

inline void require_compensated(const RawDataCube& raw) {
    if (!raw.compensated) throw StateError("reconstruction requires a phase-compensated cube");
}

inline void require_depth(double z0) {
    if (!(z0 > 0.0) || !std::isfinite(z0)) throw DomainError("slice depth must be positive");
}

}  // namespace detail

/// Aperture zero-padding factor along each axis before the spatial FFT.
inline constexpr std::size_t kAperturePad = 3;

/// Focusing terms exp(+j k_z z) for a fixed geometry, radar and depth list,
/// shared by every cube that uses them. Evanescent bins hold zero.
class FocusingFilters {
  public:
    FocusingFilters(const ScanGeometry& geom, const RadarConfig& cfg, std::vector<double> depths)
        : geometry_(geom), cfg_(cfg), depths_(std::move(depths)) {
        geometry_.validate();
        for (double z : depths_) detail::require_depth(z);
        px_ = kAperturePad * geometry_.nx();
        py_ = kAperturePad * geometry_.ny();
        const auto k = wavenumber_grid_mm(cfg_);
        const auto kx = axis_wavenumbers(px_, geometry_.pitch_x());
        const auto ky = axis_wavenumbers(py_, geometry_.pitch_y());
        // k_z depends on kx^2 and ky^2 only, so one quadrant of bins covers all four.
        qx_ = px_ / 2 + 1;
        qy_ = py_ / 2 + 1;
        const std::size_t bins = qx_ * qy_;
        filters_.assign(depths_.size() * k.size() * bins, cdouble{});
        for (std::size_t j = 0; j < k.size(); ++j) {
            const double four_k2 = 4.0 * k[j] * k[j];
            for (std::size_t m = 0; m < qx_; ++m)
                for (std::size_t n = 0; n < qy_; ++n) {
                    const double kz2 = four_k2 - kx[m] * kx[m] - ky[n] * ky[n];
                    if (kz2 <= 0.0) continue;
                    const double kz = std::sqrt(kz2);
                    for (std::size_t d = 0; d < depths_.size(); ++d)
                        filters_[(d * k.size() + j) * bins + m * qy_ + n] = std::polar(1.0, kz * depths_[d]);
                }
        }
        for (std::size_t m = 0; m < px_; ++m) row_of_.push_back(static_cast<std::size_t>(std::abs(fft_bin(m, px_))));
        for (std::size_t n = 0; n < py_; ++n) col_of_.push_back(static_cast<std::size_t>(std::abs(fft_bin(n, py_))));
    }

    /// 2 pi m / (n pitch) in FFT bin order.
    static std::vector<double> axis_wavenumbers(std::size_t n, double pitch) {
        std::vector<double> out(n);
        for (std::size_t m = 0; m < n; ++m)
            out[m] = kTwoPi * static_cast<double>(fft_bin(m, n)) / (static_cast<double>(n) * pitch);
        return out;
    }

    const std::vector<double>& depths() const { return depths_; }
    const ScanGeometry& geometry() const { return geometry_; }
    const RadarConfig& radar() const { return cfg_; }
    /// Quadrant of terms for one depth and frequency, indexed by quadrant_row/col.
    const cdouble* filter(std::size_t depth, std::size_t freq) const {
        return filters_.data() + (depth * static_cast<std::size_t>(cfg_.n_freq()) + freq) * qx_ * qy_;
    }
    std::size_t quadrant_stride() const { return qy_; }
    const std::vector<std::size_t>& quadrant_row() const { return row_of_; }
    const std::vector<std::size_t>& quadrant_col() const { return col_of_; }

  private:
    ScanGeometry geometry_;
    RadarConfig cfg_;
    std::vector<double> depths_;
    std::size_t px_ = 0, py_ = 0, qx_ = 0, qy_ = 0;
    std::vector<cdouble> filters_;
    std::vector<std::size_t> row_of_, col_of_;
};

/// Range migration reconstructor for one cube; spectra are computed once and
/// reused for every requested depth.
class RangeMigration {
  public:
    explicit RangeMigration(const RawDataCube& raw) : geometry_(raw.geometry), cfg_(raw.cfg) {
        detail::require_compensated(raw);
        geometry_.validate();
        nx_ = raw.nx();
        ny_ = raw.ny();
        nf_ = raw.nf();
        px_ = kAperturePad * nx_;
        py_ = kAperturePad * ny_;
        k_ = wavenumber_grid_mm(cfg_);
        spectra_.assign(nf_, std::vector<cdouble>(px_ * py_));
        for (std::size_t j = 0; j < nf_; ++j) {
            auto& s = spectra_[j];
            for (std::size_t a = 0; a < nx_; ++a)
                for (std::size_t b = 0; b < ny_; ++b) s[a * py_ + b] = raw.at(a, b, j);
            // Rows past nx_ are zero, so only the first nx_ need the y pass.
            fft_batch_inplace(s.data(), py_, nx_, 1, py_, FftDirection::Forward);
            fft_batch_inplace(s.data(), px_, py_, py_, 1, FftDirection::Forward);
        }
        kx_ = FocusingFilters::axis_wavenumbers(px_, geometry_.pitch_x());
        ky_ = FocusingFilters::axis_wavenumbers(py_, geometry_.pitch_y());
    }

    PixelGrid grid() const { return PixelGrid::for_geometry(geometry_); }

    /// Complex reflectivity at depth z0 (mm from the aperture plane).
    ComplexImage complex_slice(double z0) const {
        detail::require_depth(z0);
        std::vector<cdouble> acc(px_ * py_);
        for (std::size_t j = 0; j < nf_; ++j) {
            const double four_k2 = 4.0 * k_[j] * k_[j];
            const auto& s = spectra_[j];
            for (std::size_t m = 0; m < px_; ++m) {
                const double rem = four_k2 - kx_[m] * kx_[m];
                for (std::size_t n = 0; n < py_; ++n) {
                    const double kz2 = rem - ky_[n] * ky_[n];
                    if (kz2 <= 0.0) continue;  // evanescent
                    acc[m * py_ + n] += s[m * py_ + n] * std::polar(1.0, std::sqrt(kz2) * z0);
                }
            }
        }
        return upsample_and_invert(acc);
    }

    /// Same as complex_slice(filters.depths()[index]) using precomputed terms.
    ComplexImage complex_slice(const FocusingFilters& filters, std::size_t index) const {
        if (!(filters.geometry() == geometry_) || !(filters.radar() == cfg_))
            throw ConfigError("focusing filters were built for a different geometry or radar");
        if (index >= filters.depths().size()) throw DomainError("focusing filter index out of range");
        std::vector<cdouble> acc(px_ * py_);
        for (std::size_t j = 0; j < nf_; ++j) accumulate(filters, index, j, acc.data());
        return upsample_and_invert(acc);
    }

    /// Every depth of the filter set; one pass over the spectra.
    std::vector<ComplexImage> complex_slices(const FocusingFilters& filters) const {
        if (!(filters.geometry() == geometry_) || !(filters.radar() == cfg_))
            throw ConfigError("focusing filters were built for a different geometry or radar");
        const std::size_t nd = filters.depths().size();
        const std::size_t bins = px_ * py_;
        std::vector<cdouble> acc(nd * bins);
        for (std::size_t j = 0; j < nf_; ++j)
            for (std::size_t d = 0; d < nd; ++d) accumulate(filters, d, j, acc.data() + d * bins);
        std::vector<ComplexImage> out;
        out.reserve(nd);
        for (std::size_t d = 0; d < nd; ++d)
            out.push_back(upsample_and_invert(std::vector<cdouble>(acc.begin() + d * bins, acc.begin() + (d + 1) * bins)));
        return out;
    }

    SarSlice slice(double z0) const {
        SarSlice out;
        out.image = complex_slice(z0).magnitude();
        out.z0 = z0;
        out.extent = grid().extent();
        return out;
    }

  private:
    // Spectral zero-padding by two, inverse transform, crop to the aperture.
    // Done axis by axis so that only the rows and columns that survive the
    // crop are transformed.
    void accumulate(const FocusingFilters& filters, std::size_t depth, std::size_t freq, cdouble* acc) const {
        const cdouble* f = filters.filter(depth, freq);
        const auto& s = spectra_[freq];
        const auto& qr = filters.quadrant_row();
        const auto& qc = filters.quadrant_col();
        const std::size_t stride = filters.quadrant_stride();
        for (std::size_t m = 0; m < px_; ++m) {
            const cdouble* fr = f + qr[m] * stride;
            const cdouble* sr = s.data() + m * py_;
            cdouble* ar = acc + m * py_;
            for (std::size_t n = 0; n < py_; ++n) {
                // Spelled out: std::complex operator* goes through the NaN-aware libcall.
                const cdouble a = sr[n], b = fr[qc[n]];
                ar[n] += cdouble(a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real());
            }
        }
    }

    ComplexImage upsample_and_invert(const std::vector<cdouble>& spectrum) const {
        const std::size_t qx = 2 * px_;
        const std::size_t qy = 2 * py_;
        const PixelGrid g = grid();
        const std::size_t w = g.width;
        const std::size_t h = g.height;
        std::vector<cdouble> mid(px_ * qy);
        for (std::size_t m = 0; m < px_; ++m)
            for (std::size_t n = 0; n < py_; ++n) {
                const auto bn = static_cast<std::size_t>((fft_bin(n, py_) + static_cast<long>(qy)) % static_cast<long>(qy));
                mid[m * qy + bn] = spectrum[m * py_ + n];
            }
        fft_batch_inplace(mid.data(), qy, px_, 1, qy, FftDirection::Inverse);
        std::vector<cdouble> big(qx * h);
        for (std::size_t m = 0; m < px_; ++m) {
            const auto bm = static_cast<std::size_t>((fft_bin(m, px_) + static_cast<long>(qx)) % static_cast<long>(qx));
            std::copy_n(mid.begin() + static_cast<long>(m * qy), h, big.begin() + static_cast<long>(bm * h));
        }
        fft_batch_inplace(big.data(), qx, h, h, 1, FftDirection::Inverse);
        const double scale = 1.0 / (static_cast<double>(px_ * py_) * static_cast<double>(nf_));
        ComplexImage out(w, h);
        for (std::size_t row = 0; row < h; ++row)
            for (std::size_t col = 0; col < w; ++col) out.at(row, col) = big[col * h + row] * scale;
        return out;
    }

    ScanGeometry geometry_;
    RadarConfig cfg_;
    std::size_t nx_ = 0, ny_ = 0, nf_ = 0, px_ = 0, py_ = 0;
    std::vector<double> k_, kx_, ky_;
    std::vector<std::vector<cdouble>> spectra_;
};

inline ComplexImage reconstruct_slice_complex(const RawDataCube& raw, double z0) {
    detail::require_compensated(raw);
    detail::require_depth(z0);
    return RangeMigration(raw).complex_slice(z0);
}

inline SarSlice reconstruct_slice(const RawDataCube& raw, double z0) {
    detail::require_compensated(raw);
    detail::require_depth(z0);
    return RangeMigration(raw).slice(z0);
}

/// Time-domain matched filter on the same pixel grid as reconstruct_slice.
/// O(pixels x aperture x frequencies); intended for verification only.
inline ComplexImage backproject_oracle_complex(const RawDataCube& raw, double z0) {
    detail::require_compensated(raw);
    detail::require_depth(z0);
    const auto& g = raw.geometry;
    const PixelGrid grid = PixelGrid::for_geometry(g);
    const auto k = wavenumber_grid_mm(raw.cfg);
    const std::size_t nf = k.size();
    ComplexImage out(grid.width, grid.height);
    const double scale = 1.0 / static_cast<double>(raw.nx() * raw.ny() * nf);
    for (std::size_t row = 0; row < grid.height; ++row) {
        const double py = grid.y(row);
        for (std::size_t col = 0; col < grid.width; ++col) {
            const double px = grid.x(col);
            cdouble sum;
            for (std::size_t a = 0; a < raw.nx(); ++a) {
                const double dx = px - g.x_positions[a];
                for (std::size_t b = 0; b < raw.ny(); ++b) {
                    const double dy = py - g.y_positions[b];
                    const double two_r = 2.0 * std::sqrt(dx * dx + dy * dy + z0 * z0);
                    const cdouble* s = &raw.data[raw.index(a, b, 0)];
                    for (std::size_t j = 0; j < nf; ++j) sum += s[j] * std::polar(1.0, k[j] * two_r);
                }
            }
            out.at(row, col) = sum * scale;
        }
    }
    return out;
}

inline SarSlice backproject_oracle(const RawDataCube& raw, double z0) {
    SarSlice out;
    out.image = backproject_oracle_complex(raw, z0).magnitude();
    out.z0 = z0;
    out.extent = PixelGrid::for_geometry(raw.geometry).extent();
    return out;
}

inline std::size_t depth_count(double z_min, double z_max, double step) {
    if (!std::isfinite(z_min) || !std::isfinite(z_max) || !(step > 0.0) || z_min > z_max || !(z_min > 0.0))
        throw DomainError("depth_stack: require 0 < z_min <= z_max and step > 0");
    return static_cast<std::size_t>(std::floor((z_max - z_min) / step + 1e-9)) + 1;
}

/// Slices at z_min, z_min + step, ... up to z_max.
inline DepthStack depth_stack(const RawDataCube& raw, double z_min, double z_max, double step) {
    const std::size_t count = depth_count(z_min, z_max, step);
    detail::require_compensated(raw);
    RangeMigration rma(raw);
    DepthStack stack;
    stack.z_min = z_min;
    stack.z_max = z_max;
    stack.step = step;
    stack.slices.reserve(count);
    for (std::size_t i = 0; i < count; ++i) stack.slices.push_back(rma.slice(z_min + static_cast<double>(i) * step));
    return stack;
}

/// Stack at the filter bank's depths.
inline DepthStack depth_stack(const RawDataCube& raw, const FocusingFilters& filters) {
    detail::require_compensated(raw);
    const auto& z = filters.depths();
    if (z.empty()) throw DomainError("depth_stack: empty depth list");
    RangeMigration rma(raw);
    DepthStack stack;
    stack.z_min = z.front();
    stack.z_max = z.back();
    stack.step = z.size() > 1 ? z[1] - z[0] : 1.0;
    auto images = rma.complex_slices(filters);
    for (std::size_t i = 0; i < z.size(); ++i) {
        SarSlice s;
        s.image = images[i].magnitude();
        s.z0 = z[i];
        s.extent = rma.grid().extent();
        stack.slices.push_back(std::move(s));
    }
    return stack;
}

/// Affine map to [0, 1]; a constant image maps to all zeros.
inline Image normalize01(const Image& img) {
    Image out = img;
    if (img.pixels.empty()) return out;
    const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
    const double mn = *lo;
    const double mx = *hi;
    if (!(mx > mn)) {
        std::fill(out.pixels.begin(), out.pixels.end(), 0.0);
        return out;
    }
    const double inv = 1.0 / (mx - mn);
    for (auto& p : out.pixels) p = std::clamp((p - mn) * inv, 0.0, 1.0);
    return out;
}

inline SarSlice normalize01(const SarSlice& s) {
    SarSlice out = s;
    out.image = normalize01(s.image);
    return out;
}

/// Joint [0, 1] normalization over every slice, preserving relative
/// brightness between depths.
inline DepthStack normalize_stack(const DepthStack& stack) {
    DepthStack out = stack;
    double mn = INFINITY;
    double mx = -INFINITY;
    for (const auto& s : stack.slices)
        for (double p : s.image.pixels) {
            mn = std::min(mn, p);
            mx = std::max(mx, p);
        }
    for (auto& s : out.slices)
        for (auto& p : s.image.pixels) p = mx > mn ? std::clamp((p - mn) / (mx - mn), 0.0, 1.0) : 0.0;
    return out;
}

struct PixelRect {
    std::size_t x = 0;  // column of the top-left corner
    std::size_t y = 0;  // row of the top-left corner
    std::size_t width = 0;
    std::size_t height = 0;
};

inline void check_rect(const PixelRect& r, std::size_t width, std::size_t height) {
    if (r.width == 0 || r.height == 0 || r.x + r.width > width || r.y + r.height > height)
        throw DomainError("crop_fov: rectangle outside image bounds");
}

inline Image crop_fov(const Image& img, const PixelRect& rect) {
    check_rect(rect, img.width, img.height);
    Image out(rect.width, rect.height);
    for (std::size_t r = 0; r < rect.height; ++r)
        for (std::size_t c = 0; c < rect.width; ++c) out.at(r, c) = img.at(rect.y + r, rect.x + c);
    return out;
}

// ---------------------------------------------------------------------------
// Image analysis helpers.

struct PeakLocation {
    std::size_t row = 0;
    std::size_t col = 0;
    double value = 0.0;
};

inline PeakLocation argmax(const Image& img) {
    const auto it = std::max_element(img.pixels.begin(), img.pixels.end());
    const auto idx = static_cast<std::size_t>(it - img.pixels.begin());
    return {idx / img.width, idx % img.width, *it};
}

/// -3 dB (1/sqrt 2 in magnitude) main-lobe width along the row through `peak`,
/// linearly interpolated between pixels, in units of `pitch`.
inline double mainlobe_width_3db(const Image& img, const PeakLocation& peak, double pitch) {
    const double level = peak.value / std::sqrt(2.0);
    auto crossing = [&](int dir) {
        long c = static_cast<long>(peak.col);
        double prev = peak.value;
        while (true) {
            const long next = c + dir;
            if (next < 0 || next >= static_cast<long>(img.width)) return static_cast<double>(c - static_cast<long>(peak.col));
            const double v = img.at(peak.row, static_cast<std::size_t>(next));
            if (v < level) {
                const double frac = (prev - level) / (prev - v);
                return static_cast<double>(c - static_cast<long>(peak.col)) + dir * frac;
            }
            prev = v;
            c = next;
        }
    };
    return (crossing(+1) - crossing(-1)) * pitch;
}

/// |<a, b>| / (|a| |b|) over complex pixels.
inline double normalized_correlation(const ComplexImage& a, const ComplexImage& b) {
    if (a.pixels.size() != b.pixels.size()) throw DomainError("normalized_correlation: size mismatch");
    cdouble dot;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        dot += a.pixels[i] * std::conj(b.pixels[i]);
        na += std::norm(a.pixels[i]);
        nb += std::norm(b.pixels[i]);
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::abs(dot) / std::sqrt(na * nb);
}

}  // namespace hydra
