#pragma once

// FMCW waveform model shared by the scene simulator and the reconstructor.

#include <cmath>
#include <string>
#include <vector>

#include "hydra/common.hpp"

namespace hydra {

inline constexpr double kSpeedOfLight = 2.99792458e8;  // m/s

/// FMCW chirp parameters. The slope is derived, never set independently.
class RadarConfig {
  public:
    RadarConfig(double f0_hz, double bandwidth_hz, double chirp_s, int n_freq)
        : f0_(f0_hz), bandwidth_(bandwidth_hz), chirp_T_(chirp_s), n_freq_(n_freq) {
        if (!(f0_ > 0.0) || !(bandwidth_ > 0.0) || !(chirp_T_ > 0.0) || n_freq_ < 2 ||
            !std::isfinite(f0_) || !std::isfinite(bandwidth_) || !std::isfinite(chirp_T_)) {
            throw ConfigError("RadarConfig: require f0 > 0, B > 0, T > 0, n_freq >= 2");
        }
        slope_ = bandwidth_ / chirp_T_;
    }

    /// 77-81 GHz sweep of the IWR1642-class sensor.
    static RadarConfig iwr1642(int n_freq = 32) { return {77e9, 4e9, 40e-6, n_freq}; }

    double f0() const { return f0_; }
    double bandwidth() const { return bandwidth_; }
    double chirp_T() const { return chirp_T_; }
    double slope() const { return slope_; }
    int n_freq() const { return n_freq_; }
    double center_frequency() const { return f0_ + 0.5 * bandwidth_; }
    double center_wavelength_mm() const { return kSpeedOfLight / center_frequency() * 1e3; }

    /// Sampled frequency j, uniform over [f0, f0 + B].
    double frequency(int j) const {
        return f0_ + static_cast<double>(j) * bandwidth_ / static_cast<double>(n_freq_ - 1);
    }

    bool operator==(const RadarConfig&) const = default;

  private:
    double f0_;
    double bandwidth_;
    double chirp_T_;
    int n_freq_;
    double slope_ = 0.0;
};

/// Point echo: round-trip delay and complex reflectivity.
struct Echo {
    double tau = 0.0;  // s
    cdouble sigma{1.0, 0.0};
};

/// Transmitted chirp m(t) = cos(2 pi (f0 t + K t^2 / 2)).
inline double chirp_sample(double t, const RadarConfig& cfg) {
    if (!(t >= 0.0 && t <= cfg.chirp_T())) throw DomainError("chirp_sample: t outside [0, T]");
    return std::cos(kTwoPi * (cfg.f0() * t + 0.5 * cfg.slope() * t * t));
}

/// Dechirped complex beat sample sigma * exp(-j 2 pi (f0 tau + K tau t - K tau^2 / 2)).
inline cdouble beat_sample(const Echo& echo, double t, const RadarConfig& cfg) {
    if (!(t >= 0.0 && t <= cfg.chirp_T())) throw DomainError("beat_sample: t outside [0, T]");
    if (!(echo.tau >= 0.0) || !std::isfinite(echo.tau) || !std::isfinite(echo.sigma.real()) ||
        !std::isfinite(echo.sigma.imag())) {
        throw DomainError("beat_sample: invalid echo");
    }
    const double K = cfg.slope();
    const double cycles = cfg.f0() * echo.tau + K * echo.tau * t - 0.5 * K * echo.tau * echo.tau;
    // Reduce to one cycle before scaling by 2 pi; f0 tau alone is O(100) cycles.
    const double frac = cycles - std::floor(cycles);
    return echo.sigma * std::polar(1.0, -kTwoPi * frac);
}

/// Wavenumbers k_j = 2 pi f_j / c in rad/m, strictly increasing.
inline std::vector<double> wavenumber_grid(const RadarConfig& cfg) {
    std::vector<double> k(static_cast<std::size_t>(cfg.n_freq()));
    for (int j = 0; j < cfg.n_freq(); ++j) k[static_cast<std::size_t>(j)] = kTwoPi * cfg.frequency(j) / kSpeedOfLight;
    return k;
}

/// Same grid in rad/mm, the unit used by the scene geometry.
inline std::vector<double> wavenumber_grid_mm(const RadarConfig& cfg) {
    auto k = wavenumber_grid(cfg);
    for (auto& v : k) v *= 1e-3;
    return k;
}

}  // namespace hydra
