#pragma once

// Point-scatterer scenes and raw data synthesis over a planar scan aperture.
//
// Lengths are millimetres throughout; wavenumbers are converted to rad/mm.
// The aperture plane sits at z = Z0 and scatterer depth is measured along z.

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hydra/common.hpp"
#include "hydra/radar.hpp"

namespace hydra {

enum class Wetness : std::uint8_t { Dry = 0, Wet = 1 };

inline const char* to_string(Wetness w) { return w == Wetness::Wet ? "wet" : "dry"; }

struct Scatterer {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    cdouble sigma{1.0, 0.0};
    Wetness wetness = Wetness::Dry;
};

struct Scene {
    std::vector<Scatterer> scatterers;
    Wetness label = Wetness::Dry;

    /// Majority wetness of the scatterers; ties and empty scenes are Dry.
    Wetness majority_wetness() const {
        std::size_t wet = 0;
        for (const auto& s : scatterers) wet += s.wetness == Wetness::Wet ? 1 : 0;
        return 2 * wet > scatterers.size() ? Wetness::Wet : Wetness::Dry;
    }
};

/// Scan positions of the two-axis aperture.
///
/// TX and RX are separated horizontally by delta_T about each scan position;
/// reference_depth is the standoff used for multistatic phase compensation.
struct ScanGeometry {
    std::vector<double> x_positions;
    std::vector<double> y_positions;
    double delta_T = 0.0;
    double Z0 = 0.0;
    double reference_depth = 300.0;

    std::size_t nx() const { return x_positions.size(); }
    std::size_t ny() const { return y_positions.size(); }
    double pitch_x() const { return nx() > 1 ? x_positions[1] - x_positions[0] : 1.0; }
    double pitch_y() const { return ny() > 1 ? y_positions[1] - y_positions[0] : 1.0; }
    double extent_x() const { return pitch_x() * static_cast<double>(nx()); }
    double extent_y() const { return pitch_y() * static_cast<double>(ny()); }

    /// nx by ny grid centred on the origin.
    static ScanGeometry uniform(std::size_t nx, std::size_t ny, double pitch_x, double pitch_y) {
        ScanGeometry g;
        g.x_positions.resize(nx);
        g.y_positions.resize(ny);
        for (std::size_t i = 0; i < nx; ++i)
            g.x_positions[i] = (static_cast<double>(i) - 0.5 * static_cast<double>(nx - 1)) * pitch_x;
        for (std::size_t i = 0; i < ny; ++i)
            g.y_positions[i] = (static_cast<double>(i) - 0.5 * static_cast<double>(ny - 1)) * pitch_y;
        return g;
    }

    /// Full 150 mm x 100 mm scanner travel sampled at a quarter wavelength.
    static ScanGeometry full_aperture(const RadarConfig& cfg, double width = 150.0, double height = 100.0) {
        const double pitch = cfg.center_wavelength_mm() / 4.0;
        const auto nx = static_cast<std::size_t>(std::floor(width / pitch)) + 1;
        const auto ny = static_cast<std::size_t>(std::floor(height / pitch)) + 1;
        return uniform(nx, ny, pitch, pitch);
    }

    void validate() const {
        auto check_axis = [](const std::vector<double>& p, const char* name) {
            if (p.empty()) throw ConfigError(std::string("ScanGeometry: empty ") + name);
            if (p.size() < 2) return;
            const double step = p[1] - p[0];
            if (!(step > 0.0)) throw ConfigError(std::string("ScanGeometry: ") + name + " not increasing");
            for (std::size_t i = 1; i < p.size(); ++i) {
                const double d = p[i] - p[i - 1];
                if (!(d > 0.0) || std::abs(d - step) > 1e-9 * std::max(1.0, std::abs(step)))
                    throw ConfigError(std::string("ScanGeometry: ") + name + " not uniformly spaced");
            }
        };
        check_axis(x_positions, "x_positions");
        check_axis(y_positions, "y_positions");
        if (!std::isfinite(delta_T) || !std::isfinite(Z0) || !(reference_depth > 0.0))
            throw ConfigError("ScanGeometry: invalid delta_T, Z0 or reference depth");
    }

    bool operator==(const ScanGeometry&) const = default;
};

/// Complex samples indexed [x, y, frequency], row-major.
struct RawDataCube {
    std::vector<cdouble> data;
    ScanGeometry geometry;
    RadarConfig cfg;
    bool compensated = false;

    RawDataCube(ScanGeometry geom, RadarConfig radar)
        : data(geom.nx() * geom.ny() * static_cast<std::size_t>(radar.n_freq())),
          geometry(std::move(geom)),
          cfg(radar) {}

    std::size_t nx() const { return geometry.nx(); }
    std::size_t ny() const { return geometry.ny(); }
    std::size_t nf() const { return static_cast<std::size_t>(cfg.n_freq()); }

    std::size_t index(std::size_t a, std::size_t b, std::size_t j) const { return (a * ny() + b) * nf() + j; }
    cdouble& at(std::size_t a, std::size_t b, std::size_t j) { return data[index(a, b, j)]; }
    const cdouble& at(std::size_t a, std::size_t b, std::size_t j) const { return data[index(a, b, j)]; }

    RawDataCube& operator+=(const RawDataCube& other) {
        if (other.data.size() != data.size()) throw DomainError("RawDataCube: shape mismatch");
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += other.data[i];
        return *this;
    }
};

struct TwoWayRanges {
    double tx = 0.0;
    double rx = 0.0;
};

/// Transmitter and receiver ranges for one scan sample.
///
/// The receiver sits at x' + delta_T/2 and the transmitter at x' - delta_T/2,
/// so that delta_T = 0 collapses to a co-located (monostatic) antenna.
inline TwoWayRanges two_way_ranges(const Scatterer& sc, double x_ap, double y_t, double y_r,
                                   const ScanGeometry& geom) {
    if (!(sc.z > 0.0)) throw DomainError("two_way_ranges: scatterer depth must be positive");
    const double dz = sc.z - geom.Z0;
    const double half = 0.5 * geom.delta_T;
    const double dxt = sc.x - (x_ap - half);
    const double dxr = sc.x - (x_ap + half);
    const double dyt = sc.y - y_t;
    const double dyr = sc.y - y_r;
    return {std::sqrt(dxt * dxt + dyt * dyt + dz * dz), std::sqrt(dxr * dxr + dyr * dyr + dz * dz)};
}

/// Raw cube s(x', y, k) = sum over scatterers of sigma exp(-j k (R_T + R_R)).
inline RawDataCube simulate_scan(const Scene& scene, const ScanGeometry& geom, const RadarConfig& cfg,
                                 unsigned threads = 1) {
    geom.validate();
    for (const auto& s : scene.scatterers) {
        if (!(s.z > 0.0) || !std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.sigma.real()) ||
            !std::isfinite(s.sigma.imag()))
            throw DomainError("simulate_scan: invalid scatterer");
    }
    RawDataCube cube(geom, cfg);
    const auto k = wavenumber_grid_mm(cfg);
    const std::size_t nf = k.size();
    const double dk = k[1] - k[0];
    const std::size_t ny = geom.ny();

    parallel_for(geom.nx() * ny, threads, [&](std::size_t pos) {
        const std::size_t a = pos / ny;
        const std::size_t b = pos % ny;
        cdouble* out = &cube.data[pos * nf];
        for (const auto& s : scene.scatterers) {
            const auto r = two_way_ranges(s, geom.x_positions[a], geom.y_positions[b], geom.y_positions[b], geom);
            const double path = r.tx + r.rx;
            // Uniform k grid: advance the phasor by a fixed rotation per bin,
            // re-anchoring every 8 bins to bound the accumulated rounding.
            const cdouble step = std::polar(1.0, -dk * path);
            cdouble phasor;
            for (std::size_t j = 0; j < nf; ++j) {
                if (j % 8 == 0)
                    phasor = std::polar(1.0, -k[j] * path);
                else
                    phasor *= step;
                out[j] += s.sigma * phasor;
            }
        }
    });
    return cube;
}

/// Multistatic-to-monostatic phase factor exp(+j k (R_T + R_R - 2 R_mono)) for
/// a reference point straight ahead of the scan position at the reference depth.
inline cdouble compensation_factor(double k_mm, const ScanGeometry& geom) {
    const double zr = geom.reference_depth;
    const double half = 0.5 * geom.delta_T;
    const double bistatic = 2.0 * std::sqrt(half * half + zr * zr);
    return std::polar(1.0, k_mm * (bistatic - 2.0 * zr));
}

inline RawDataCube phase_compensate(const RawDataCube& raw) {
    if (raw.compensated) throw StateError("phase_compensate: cube already compensated");
    RawDataCube out = raw;
    const auto k = wavenumber_grid_mm(raw.cfg);
    std::vector<cdouble> factor(k.size());
    for (std::size_t j = 0; j < k.size(); ++j) factor[j] = compensation_factor(k[j], raw.geometry);
    const std::size_t nf = k.size();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= factor[i % nf];
    out.compensated = true;
    return out;
}

/// Breeze model: each scan position sees a random range offset
/// dr ~ U(-amplitude, amplitude), applied as exp(-j 2 k dr).
inline RawDataCube wind_perturb(const RawDataCube& raw, double amplitude_mm, std::uint64_t seed) {
    if (!(amplitude_mm >= 0.0) || !std::isfinite(amplitude_mm)) throw DomainError("wind_perturb: amplitude < 0");
    RawDataCube out = raw;
    if (amplitude_mm == 0.0) return out;
    const auto k = wavenumber_grid_mm(raw.cfg);
    Rng rng(seed);
    const std::size_t nf = k.size();
    const std::size_t positions = raw.nx() * raw.ny();
    for (std::size_t p = 0; p < positions; ++p) {
        const double dr = rng.uniform(-amplitude_mm, amplitude_mm);
        for (std::size_t j = 0; j < nf; ++j) out.data[p * nf + j] *= std::polar(1.0, -2.0 * k[j] * dr);
    }
    return out;
}

/// |sigma| ranges per wetness state. Disjoint by default; widen them to
/// overlap for harder datasets.
struct ReflectivityBands {
    double dry_lo = 0.8;
    double dry_hi = 1.0;
    double wet_lo = 0.3;
    double wet_hi = 0.5;
};

/// Wet leaves reflect less than dry ones. Magnitude is uniform in the band,
/// phase uniform on [0, 2 pi).
inline cdouble reflectivity_of(Wetness wetness, std::uint64_t seed, const ReflectivityBands& bands = {}) {
    Rng rng(seed);
    const double mag = wetness == Wetness::Dry ? rng.uniform(bands.dry_lo, bands.dry_hi)
                                               : rng.uniform(bands.wet_lo, bands.wet_hi);
    return std::polar(mag, rng.uniform(0.0, kTwoPi));
}

// ---------------------------------------------------------------------------
// Scene text files: one scatterer per line, `x y z sigma_re sigma_im wetness`,
// wetness is `dry`/`wet` (or 0/1), `#` starts a comment.

inline Scene parse_scene(std::istream& in) {
    Scene scene;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string first;
        if (!(ls >> first)) continue;
        Scatterer s;
        double re = 0.0;
        double im = 0.0;
        std::string wet;
        std::istringstream rest(line);
        if (!(rest >> s.x >> s.y >> s.z >> re >> im >> wet))
            throw DataError("scene line " + std::to_string(lineno) + ": expected `x y z re im wetness`");
        std::string trailing;
        if (rest >> trailing) throw DataError("scene line " + std::to_string(lineno) + ": trailing tokens");
        if (wet == "dry" || wet == "Dry" || wet == "0")
            s.wetness = Wetness::Dry;
        else if (wet == "wet" || wet == "Wet" || wet == "1")
            s.wetness = Wetness::Wet;
        else
            throw DataError("scene line " + std::to_string(lineno) + ": wetness must be dry or wet");
        s.sigma = {re, im};
        if (!(s.z > 0.0) || !std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(re) || !std::isfinite(im))
            throw DataError("scene line " + std::to_string(lineno) + ": invalid scatterer");
        scene.scatterers.push_back(s);
    }
    scene.label = scene.majority_wetness();
    return scene;
}

inline void write_scene(std::ostream& out, const Scene& scene) {
    out << "# x y z sigma_re sigma_im wetness (mm)\n";
    out.precision(17);
    for (const auto& s : scene.scatterers)
        out << s.x << ' ' << s.y << ' ' << s.z << ' ' << s.sigma.real() << ' ' << s.sigma.imag() << ' '
            << to_string(s.wetness) << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic plants: leaves are jittered planar patches of point scatterers,
// plus a wetness-independent pot rim that anchors the reflectivity scale.

struct Leaf {
    double cx = 0.0;
    double cy = 0.0;
    double depth = 0.0;
    double half_length = 0.0;
    double half_width = 0.0;
    double angle = 0.0;
};

struct PlantParams {
    int leaves_min = 1;
    int leaves_max = 3;
    double scatterer_density = 0.3;  // per mm^2 of blade
    int scatterers_min = 20;
    int scatterers_max = 60;
    double depth_min = 210.0;
    double depth_max = 380.0;
    double half_length_min = 8.0;
    double half_length_max = 10.0;
    double aspect_min = 0.5;  // half_width / half_length
    double aspect_max = 0.65;
    double tilt_max = 0.1;       // blade depth slope, mm per mm
    double depth_jitter = 0.3;   // +- mm about the blade surface
    bool coherent_leaves = true;  // one reflectivity draw per blade
    double fov_x = 40.0;  // leaf centres within +-fov_x / 2
    double fov_y = 28.0;
    double pot_depth = 470.0;
    double pot_y = -15.0;
    double pot_half_width = 14.0;
    int pot_scatterers = 30;
    double pot_sigma = 0.65;
    ReflectivityBands bands;
};

struct Plant {
    Scene scene;
    std::vector<Leaf> leaves;
};

inline Plant make_plant(Wetness wetness, std::uint64_t seed, const PlantParams& p = {}) {
    Rng rng(seed);
    Plant plant;
    plant.scene.label = wetness;
    const int n_leaves = rng.uniform_int(p.leaves_min, p.leaves_max);
    for (int l = 0; l < n_leaves; ++l) {
        Leaf leaf;
        leaf.cx = rng.uniform(-0.5 * p.fov_x, 0.5 * p.fov_x);
        leaf.cy = rng.uniform(-0.5 * p.fov_y, 0.5 * p.fov_y);
        leaf.depth = rng.uniform(p.depth_min, p.depth_max);
        leaf.half_length = rng.uniform(p.half_length_min, p.half_length_max);
        leaf.half_width = leaf.half_length * rng.uniform(p.aspect_min, p.aspect_max);
        leaf.angle = rng.uniform(0.0, kPi);
        const double tilt = rng.uniform(-p.tilt_max, p.tilt_max);
        const cdouble blade_sigma = reflectivity_of(wetness, rng.next(), p.bands);
        // Constant areal density keeps local brightness a function of wetness.
        const double area = kPi * leaf.half_length * leaf.half_width;
        const int n_sc = std::clamp(static_cast<int>(std::lround(p.scatterer_density * area)), p.scatterers_min,
                                    p.scatterers_max);
        const double ca = std::cos(leaf.angle);
        const double sa = std::sin(leaf.angle);
        for (int i = 0; i < n_sc; ++i) {
            // Rejection-sample a point inside the elliptical blade.
            double u = 0.0;
            double v = 0.0;
            do {
                u = rng.uniform(-1.0, 1.0);
                v = rng.uniform(-1.0, 1.0);
            } while (u * u + v * v > 1.0);
            const double lx = u * leaf.half_length;
            const double ly = v * leaf.half_width;
            Scatterer s;
            s.x = leaf.cx + ca * lx - sa * ly;
            s.y = leaf.cy + sa * lx + ca * ly;
            s.z = leaf.depth + tilt * lx + rng.uniform(-p.depth_jitter, p.depth_jitter);
            s.wetness = wetness;
            s.sigma = p.coherent_leaves ? blade_sigma : reflectivity_of(wetness, rng.next(), p.bands);
            plant.scene.scatterers.push_back(s);
        }
        plant.leaves.push_back(leaf);
    }
    const double pot_phase = rng.uniform(0.0, kTwoPi);
    for (int i = 0; i < p.pot_scatterers; ++i) {
        Scatterer s;
        s.x = rng.uniform(-p.pot_half_width, p.pot_half_width);
        s.y = p.pot_y + rng.uniform(-1.5, 1.5);
        s.z = p.pot_depth;  // flat rim: a stable brightness reference
        s.sigma = std::polar(p.pot_sigma, p.coherent_leaves ? pot_phase : rng.uniform(0.0, kTwoPi));
        // Same state as the foliage, reflectivity independent of it.
        s.wetness = wetness;
        plant.scene.scatterers.push_back(s);
    }
    return plant;
}

}  // namespace hydra
