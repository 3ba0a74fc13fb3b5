#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace hydra;

TEST(RadarConfig, SlopeIsDerived) {
    const RadarConfig cfg(77e9, 4e9, 40e-6, 32);
    EXPECT_EQ(cfg.slope(), 4e9 / 40e-6);
    EXPECT_THROW(RadarConfig(0.0, 4e9, 40e-6, 32), ConfigError);
    EXPECT_THROW(RadarConfig(77e9, -1.0, 40e-6, 32), ConfigError);
    EXPECT_THROW(RadarConfig(77e9, 4e9, 0.0, 32), ConfigError);
    EXPECT_THROW(RadarConfig(77e9, 4e9, 40e-6, 1), ConfigError);
}

TEST(Chirp, StartsAtOne) {
    EXPECT_EQ(chirp_sample(0.0, RadarConfig::iwr1642()), 1.0);
}

TEST(Chirp, ZeroSweepIsFlat) {
    // f0 = 0 is rejected by the constructor; a vanishing sweep is as flat.
    EXPECT_THROW(RadarConfig(0.0, 0.0, 1.0, 2), ConfigError);
    const RadarConfig cfg(1e-300, 1e-300, 1.0, 2);
    EXPECT_DOUBLE_EQ(chirp_sample(0.5, cfg), 1.0);
}

TEST(Chirp, MatchesExtendedPrecision) {
    const RadarConfig cfg(77e9, 4e9, 1e-3, 32);
    const long double t = 1e-6L;
    const long double K = 4e9L / 1e-3L;
    const long double phase = 2.0L * std::numbers::pi_v<long double> * (77e9L * t + 0.5L * K * t * t);
    EXPECT_NEAR(chirp_sample(1e-6, cfg), static_cast<double>(std::cos(phase)), 1e-9);
}

TEST(Chirp, RejectsTimeOutsideSweep) {
    const auto cfg = RadarConfig::iwr1642();
    EXPECT_THROW(chirp_sample(-1e-9, cfg), DomainError);
    EXPECT_THROW(chirp_sample(cfg.chirp_T() * 1.001, cfg), DomainError);
}

TEST(Beat, ZeroDelayIsUnitPhase) {
    const auto cfg = RadarConfig::iwr1642();
    for (double t : {0.0, 1e-6, 2e-5, cfg.chirp_T()}) {
        const cdouble s = beat_sample({0.0, {1.0, 0.0}}, t, cfg);
        EXPECT_EQ(s.real(), 1.0);
        EXPECT_EQ(s.imag(), 0.0);
    }
}

TEST(Beat, NullReflector) {
    const cdouble s = beat_sample({1e-9, {0.0, 0.0}}, 1e-5, RadarConfig::iwr1642());
    EXPECT_EQ(s, cdouble(0.0, 0.0));
}

TEST(Beat, PhaseStepMatchesSlope) {
    const auto cfg = RadarConfig::iwr1642();
    const double tau = 2.0 * 0.25 / kSpeedOfLight;
    const double dt = 1e-8;
    const double expect = -kTwoPi * cfg.slope() * tau * dt;
    for (double t = 0.0; t + dt <= 2e-7; t += dt) {
        const cdouble a = beat_sample({tau, {1.0, 0.0}}, t, cfg);
        const cdouble b = beat_sample({tau, {1.0, 0.0}}, t + dt, cfg);
        EXPECT_NEAR(std::arg(b / a), expect, 1e-9);
    }
}

TEST(Beat, ModulusEqualsReflectivity) {
    const auto cfg = RadarConfig::iwr1642();
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
        const cdouble sigma(rng.normal(), rng.normal());
        const double tau = rng.uniform(0.0, 5e-9);
        const double t = rng.uniform(0.0, cfg.chirp_T());
        EXPECT_NEAR(std::abs(beat_sample({tau, sigma}, t, cfg)), std::abs(sigma), 1e-12 * (1.0 + std::abs(sigma)));
    }
}

TEST(Beat, PhaseIsAffineInTime) {
    const auto cfg = RadarConfig::iwr1642();
    const double tau = 1.7e-9;
    const double t0 = 1e-6, h = 3e-9;
    const cdouble a = beat_sample({tau, {1.0, 0.0}}, t0, cfg);
    const cdouble b = beat_sample({tau, {1.0, 0.0}}, t0 + h, cfg);
    const cdouble c = beat_sample({tau, {1.0, 0.0}}, t0 + 2.0 * h, cfg);
    const double d1 = std::arg(b / a);
    const double d2 = std::arg(c / b);
    EXPECT_NEAR(d1, d2, 1e-9 * std::abs(d1));
}

TEST(Wavenumbers, TwoPointGridIsBandEdges) {
    const auto k = wavenumber_grid(RadarConfig(77e9, 4e9, 40e-6, 2));
    ASSERT_EQ(k.size(), 2u);
    EXPECT_DOUBLE_EQ(k[0], kTwoPi * 77e9 / 2.99792458e8);
    EXPECT_DOUBLE_EQ(k[1], kTwoPi * 81e9 / 2.99792458e8);
}

TEST(Wavenumbers, MiddleIsMean) {
    const auto k = wavenumber_grid(RadarConfig(77e9, 4e9, 40e-6, 3));
    EXPECT_NEAR(k[1], 0.5 * (k[0] + k[2]), 1e-12 * k[1]);
}

TEST(Wavenumbers, SensorBandIs77To81GHz) {
    const auto cfg = RadarConfig::iwr1642();
    EXPECT_EQ(cfg.frequency(0), 77e9);
    EXPECT_EQ(cfg.frequency(cfg.n_freq() - 1), 81e9);
}

TEST(Wavenumbers, StrictlyIncreasingUniform) {
    const auto k = wavenumber_grid(RadarConfig::iwr1642(64));
    const double step = k[1] - k[0];
    for (std::size_t j = 1; j < k.size(); ++j) {
        EXPECT_GT(k[j], k[j - 1]);
        EXPECT_NEAR(k[j] - k[j - 1], step, 1e-12 * k[j]);
    }
}
