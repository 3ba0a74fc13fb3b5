#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "test_util.hpp"

using namespace hydra;
using hydra::test::point;
using hydra::test::scene_of;
using hydra::test::small_geometry;

namespace {

// Straight-line antenna-to-scatterer distance in extended precision.
long double dist(long double ax, long double ay, long double az, const Scatterer& s) {
    const long double dx = s.x - ax, dy = s.y - ay, dz = s.z - az;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

TEST(TwoWayRanges, OnAxis) {
    ScanGeometry g = small_geometry();
    g.Z0 = 0.0;
    const auto r = two_way_ranges(point(0, 0, 250), 0.0, 0.0, 0.0, g);
    EXPECT_DOUBLE_EQ(r.tx, 250.0);
    EXPECT_DOUBLE_EQ(r.rx, 250.0);
}

TEST(TwoWayRanges, MonostaticWhenCentred) {
    ScanGeometry g = small_geometry();
    g.delta_T = 0.0;
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const double y = rng.uniform(-20, 20);
        const auto r = two_way_ranges(point(0.0, rng.uniform(-50, 50), rng.uniform(100, 400)), rng.uniform(-20, 20),
                                      y, y, g);
        EXPECT_EQ(r.tx, r.rx);
    }
}

TEST(TwoWayRanges, OffAxisAgainstDirectDistance) {
    ScanGeometry g = small_geometry();
    g.delta_T = 2.0;
    g.Z0 = 5.0;
    const Scatterer s = point(30.0, 40.0, g.Z0 + 120.0);
    const auto r = two_way_ranges(s, 10.0, 5.0, 5.0, g);
    // TX left of the scan position, RX right of it.
    EXPECT_NEAR(r.tx, static_cast<double>(dist(10.0L - 1.0L, 5.0L, 5.0L, s)), 1e-12);
    EXPECT_NEAR(r.rx, static_cast<double>(dist(10.0L + 1.0L, 5.0L, 5.0L, s)), 1e-12);
    EXPECT_THROW(two_way_ranges(point(0, 0, 0), 0, 0, 0, g), DomainError);
}

TEST(Simulate, EmptySceneIsZero) {
    const auto cube = simulate_scan(Scene{}, small_geometry(4, 3), RadarConfig::iwr1642(8));
    for (const auto& v : cube.data) EXPECT_EQ(v, cdouble(0.0, 0.0));
    EXPECT_FALSE(cube.compensated);
}

TEST(Simulate, SingleSampleOnAxis) {
    ScanGeometry g = ScanGeometry::uniform(1, 1, 1.0, 1.0);
    const auto cfg = RadarConfig::iwr1642(4);
    const cdouble sigma(0.6, -0.3);
    const auto cube = simulate_scan(scene_of({point(0, 0, 180, sigma)}), g, cfg);
    const auto k = wavenumber_grid_mm(cfg);
    for (std::size_t j = 0; j < k.size(); ++j) {
        const cdouble expect = sigma * std::polar(1.0, -2.0 * k[j] * 180.0);
        EXPECT_NEAR(std::abs(cube.at(0, 0, j) - expect), 0.0, 1e-10);
    }
}

TEST(Simulate, MatchesTripleLoopOracle) {
    ScanGeometry g = ScanGeometry::uniform(8, 8, 1.9, 1.9);
    g.delta_T = 2.0;
    const auto cfg = RadarConfig::iwr1642(16);
    const Scene scene = scene_of({point(3, -2, 210, {0.9, 0.1}), point(-6, 4, 260, {0.2, -0.5}),
                                  point(1, 7, 305, {-0.4, 0.4})});
    const auto cube = simulate_scan(scene, g, cfg);
    double worst = 0.0;
    for (std::size_t a = 0; a < 8; ++a)
        for (std::size_t b = 0; b < 8; ++b)
            for (int j = 0; j < cfg.n_freq(); ++j) {
                const long double k = 2.0L * std::numbers::pi_v<long double> * cfg.frequency(j) / 2.99792458e11L;
                std::complex<long double> sum = 0;
                for (const auto& s : scene.scatterers) {
                    const long double xa = g.x_positions[a], ya = g.y_positions[b];
                    const long double rt = dist(xa - 1.0L, ya, g.Z0, s);
                    const long double rr = dist(xa + 1.0L, ya, g.Z0, s);
                    sum += std::complex<long double>(s.sigma.real(), s.sigma.imag()) *
                           std::polar(1.0L, -k * (rt + rr));
                }
                const cdouble got = cube.at(a, b, static_cast<std::size_t>(j));
                worst = std::max(worst, static_cast<double>(std::abs(std::complex<long double>(got.real(), got.imag()) - sum)));
            }
    EXPECT_LT(worst, 1e-10);
}

TEST(Simulate, LinearInScene) {
    const auto g = small_geometry(6, 5);
    const auto cfg = RadarConfig::iwr1642(8);
    const Scene a = scene_of({point(1, 2, 220), point(-3, 0, 240, {0.3, 0.3})});
    const Scene b = scene_of({point(4, -4, 300, {0.5, -0.1})});
    Scene ab = a;
    ab.scatterers.insert(ab.scatterers.end(), b.scatterers.begin(), b.scatterers.end());
    auto sum = simulate_scan(a, g, cfg);
    sum += simulate_scan(b, g, cfg);
    const auto joint = simulate_scan(ab, g, cfg);
    for (std::size_t i = 0; i < sum.data.size(); ++i) EXPECT_LT(std::abs(sum.data[i] - joint.data[i]), 1e-12);
}

TEST(Simulate, ScalesWithReflectivity) {
    const auto g = small_geometry(5, 4);
    const auto cfg = RadarConfig::iwr1642(8);
    const cdouble c(0.5, -2.0);
    Scene a = scene_of({point(1, 2, 220, {0.7, 0.1}), point(-3, 0, 240, {0.3, 0.3})});
    Scene b = a;
    for (auto& s : b.scatterers) s.sigma *= c;
    const auto ca = simulate_scan(a, g, cfg);
    const auto cb = simulate_scan(b, g, cfg);
    for (std::size_t i = 0; i < ca.data.size(); ++i) EXPECT_LT(std::abs(ca.data[i] * c - cb.data[i]), 1e-12);
}

TEST(Simulate, ThreadCountDoesNotChangeOutput) {
    const auto g = small_geometry(8, 6);
    const auto cfg = RadarConfig::iwr1642(8);
    const Scene s = make_plant(Wetness::Dry, 3).scene;
    EXPECT_EQ(simulate_scan(s, g, cfg, 1).data, simulate_scan(s, g, cfg, 3).data);
}

TEST(Compensation, IdentityWhenMonostatic) {
    ScanGeometry g = small_geometry(4, 3);
    g.delta_T = 0.0;
    const auto cfg = RadarConfig::iwr1642(8);
    const auto raw = simulate_scan(scene_of({point(2, 1, 240)}), g, cfg);
    const auto comp = phase_compensate(raw);
    EXPECT_EQ(comp.data, raw.data);
    EXPECT_TRUE(comp.compensated);
}

TEST(Compensation, ReferenceScattererBecomesMonostatic) {
    ScanGeometry g = ScanGeometry::uniform(1, 1, 1.0, 1.0);
    g.delta_T = 2.0;
    g.reference_depth = 300.0;
    const auto cfg = RadarConfig::iwr1642(16);
    const auto comp = phase_compensate(simulate_scan(scene_of({point(0, 0, 300)}), g, cfg));
    ScanGeometry mono = g;
    mono.delta_T = 0.0;
    const auto ref = simulate_scan(scene_of({point(0, 0, 300)}), mono, cfg);
    for (std::size_t j = 0; j < comp.nf(); ++j) EXPECT_NEAR(std::arg(comp.data[j] / ref.data[j]), 0.0, 1e-9);
}

TEST(Compensation, UnitModulusAndSingleUse) {
    ScanGeometry g = small_geometry(4, 3);
    g.delta_T = 2.0;
    const auto raw = simulate_scan(make_plant(Wetness::Wet, 1).scene, g, RadarConfig::iwr1642(8));
    const auto comp = phase_compensate(raw);
    for (std::size_t i = 0; i < raw.data.size(); ++i)
        EXPECT_NEAR(std::abs(comp.data[i]), std::abs(raw.data[i]), 1e-12 * (1.0 + std::abs(raw.data[i])));
    EXPECT_THROW(phase_compensate(comp), StateError);
}

TEST(Wind, ZeroAmplitudeIsIdentity) {
    const auto raw = simulate_scan(make_plant(Wetness::Dry, 2).scene, small_geometry(4, 3), RadarConfig::iwr1642(8));
    EXPECT_EQ(wind_perturb(raw, 0.0, 9).data, raw.data);
}

TEST(Wind, SeededAndPhaseOnly) {
    const auto raw = simulate_scan(make_plant(Wetness::Dry, 2).scene, small_geometry(4, 3), RadarConfig::iwr1642(8));
    const auto a = wind_perturb(raw, 2.0, 5);
    const auto b = wind_perturb(raw, 2.0, 5);
    EXPECT_EQ(a.data, b.data);
    EXPECT_NE(a.data, wind_perturb(raw, 2.0, 6).data);
    for (std::size_t i = 0; i < raw.data.size(); ++i)
        EXPECT_NEAR(std::abs(a.data[i]), std::abs(raw.data[i]), 1e-12 * (1.0 + std::abs(raw.data[i])));
    EXPECT_THROW(wind_perturb(raw, -1.0, 5), DomainError);
}

TEST(Wind, DegradesPointTargetFocus) {
    const auto g = small_geometry(16, 12);
    const auto cfg = RadarConfig::iwr1642(16);
    const auto raw = phase_compensate(simulate_scan(scene_of({point(0, 0, 150)}), g, cfg));
    auto peak_to_mean = [](const SarSlice& s) {
        double mx = 0.0, sum = 0.0;
        for (double v : s.image.pixels) {
            mx = std::max(mx, v);
            sum += v;
        }
        return mx / (sum / static_cast<double>(s.image.pixels.size()));
    };
    const double clean = peak_to_mean(reconstruct_slice(raw, 150.0));
    const double windy = peak_to_mean(reconstruct_slice(wind_perturb(raw, 2.0, 1), 150.0));
    EXPECT_LT(windy, 0.9 * clean);
}

TEST(Reflectivity, BandsAreDisjoint) {
    double min_dry = 1e9, max_wet = 0.0;
    for (std::uint64_t s = 0; s < 2000; ++s) {
        min_dry = std::min(min_dry, std::abs(reflectivity_of(Wetness::Dry, s)));
        max_wet = std::max(max_wet, std::abs(reflectivity_of(Wetness::Wet, s)));
    }
    EXPECT_GT(min_dry, max_wet);
}

TEST(Reflectivity, Deterministic) {
    EXPECT_EQ(reflectivity_of(Wetness::Wet, 77), reflectivity_of(Wetness::Wet, 77));
}

TEST(Reflectivity, MeanRatio) {
    double dry = 0.0, wet = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        dry += std::abs(reflectivity_of(Wetness::Dry, derive_seed(1, static_cast<std::uint64_t>(i))));
        wet += std::abs(reflectivity_of(Wetness::Wet, derive_seed(2, static_cast<std::uint64_t>(i))));
    }
    // Uniform bands: E|sigma| is the band midpoint, 0.9 / 0.4.
    EXPECT_NEAR(dry / wet, 0.9 / 0.4, 0.05);
}

TEST(SceneFile, RoundTrip) {
    const Scene s = make_plant(Wetness::Wet, 11).scene;
    std::stringstream ss;
    write_scene(ss, s);
    const Scene back = parse_scene(ss);
    ASSERT_EQ(back.scatterers.size(), s.scatterers.size());
    for (std::size_t i = 0; i < s.scatterers.size(); ++i) {
        EXPECT_EQ(back.scatterers[i].x, s.scatterers[i].x);
        EXPECT_EQ(back.scatterers[i].z, s.scatterers[i].z);
        EXPECT_EQ(back.scatterers[i].sigma, s.scatterers[i].sigma);
        EXPECT_EQ(back.scatterers[i].wetness, s.scatterers[i].wetness);
    }
    EXPECT_EQ(back.label, Wetness::Wet);
}

TEST(SceneFile, CommentsAndErrors) {
    std::istringstream ok("# header\n\n1 2 3 0.5 0 dry  # trailing comment\n");
    EXPECT_EQ(parse_scene(ok).scatterers.size(), 1u);
    std::istringstream bad_wet("1 2 3 0.5 0 damp\n");
    EXPECT_THROW(parse_scene(bad_wet), DataError);
    std::istringstream short_line("1 2 3 0.5\n");
    EXPECT_THROW(parse_scene(short_line), DataError);
    std::istringstream neg_depth("1 2 -3 0.5 0 wet\n");
    EXPECT_THROW(parse_scene(neg_depth), DataError);
}

TEST(Plants, LabelMatchesMajority) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Plant dry = make_plant(Wetness::Dry, s);
        const Plant wet = make_plant(Wetness::Wet, s);
        EXPECT_EQ(dry.scene.majority_wetness(), Wetness::Dry);
        EXPECT_EQ(wet.scene.majority_wetness(), Wetness::Wet);
        EXPECT_FALSE(dry.scene.scatterers.empty());
        for (const auto& leaf : dry.leaves) {
            EXPECT_GE(leaf.depth, 200.0);
            EXPECT_LE(leaf.depth, 500.0);
        }
    }
}
