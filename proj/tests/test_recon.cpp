#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"

using namespace hydra;
using hydra::test::point;
using hydra::test::scene_of;
using hydra::test::small_geometry;

namespace {

RawDataCube cube_for(const Scene& s, const ScanGeometry& g, int nf = 16) {
    return phase_compensate(simulate_scan(s, g, RadarConfig::iwr1642(nf)));
}

// Pixel nearest to physical (x, y).
std::pair<long, long> pixel_of(const PixelGrid& g, double x, double y) {
    return {std::lround((y - g.y0) / g.dy), std::lround((x - g.x0) / g.dx)};
}

bool near_pixel(const PeakLocation& p, std::pair<long, long> rc, long tol = 1) {
    return std::abs(static_cast<long>(p.row) - rc.first) <= tol && std::abs(static_cast<long>(p.col) - rc.second) <= tol;
}

double median(std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
    return v[v.size() / 2];
}

}  // namespace

TEST(Reconstruct, EmptySceneGivesZeroSlice) {
    const auto raw = cube_for(Scene{}, small_geometry());
    const auto s = reconstruct_slice(raw, 250.0);
    for (double v : s.image.pixels) EXPECT_EQ(v, 0.0);
}

TEST(Reconstruct, RequiresCompensationAndPositiveDepth) {
    const auto raw = simulate_scan(Scene{}, small_geometry(4, 3), RadarConfig::iwr1642(4));
    EXPECT_THROW(reconstruct_slice(raw, 250.0), StateError);
    const auto comp = phase_compensate(raw);
    EXPECT_THROW(reconstruct_slice(comp, 0.0), DomainError);
    EXPECT_THROW(reconstruct_slice(comp, -5.0), DomainError);
}

TEST(Reconstruct, OnAxisPointIsCentred) {
    // Aperture wide enough that the main lobe fits in the raster.
    const auto g = small_geometry(32, 24);
    const auto raw = cube_for(scene_of({point(0, 0, 250)}), g);
    const auto s = reconstruct_slice(raw, 250.0);
    EXPECT_TRUE(near_pixel(argmax(s.image), pixel_of(PixelGrid::for_geometry(g), 0.0, 0.0)));
    const auto bp = backproject_oracle(raw, 250.0);
    EXPECT_TRUE(near_pixel(argmax(bp.image), pixel_of(PixelGrid::for_geometry(g), 0.0, 0.0)));
}

TEST(Reconstruct, AgreesWithBackprojection) {
    const auto g = small_geometry();
    const auto raw = cube_for(scene_of({point(0, 0, 250)}), g);
    EXPECT_GT(normalized_correlation(reconstruct_slice_complex(raw, 250.0), backproject_oracle_complex(raw, 250.0)),
              0.95);
}

TEST(Reconstruct, LinearInCube) {
    const auto g = small_geometry(10, 8);
    const auto a = cube_for(scene_of({point(2, 1, 200)}), g);
    const auto b = cube_for(scene_of({point(-4, 3, 230, {0.2, 0.7})}), g);
    RawDataCube ab = a;
    ab += b;
    const auto sa = reconstruct_slice_complex(a, 210.0);
    const auto sb = reconstruct_slice_complex(b, 210.0);
    const auto sab = reconstruct_slice_complex(ab, 210.0);
    double scale = 0.0;
    for (const auto& v : sab.pixels) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < sab.pixels.size(); ++i)
        EXPECT_LT(std::abs(sa.pixels[i] + sb.pixels[i] - sab.pixels[i]), 1e-9 * scale);
}

TEST(Reconstruct, ShiftByOnePitchMovesTwoPixels) {
    // The output raster samples at half the scan pitch.
    const auto g = small_geometry(20, 12);
    const double pitch = g.pitch_x();
    const auto s0 = reconstruct_slice(cube_for(scene_of({point(0, 0, 150)}), g), 150.0);
    const auto s1 = reconstruct_slice(cube_for(scene_of({point(pitch, 0, 150)}), g), 150.0);
    const auto p0 = argmax(s0.image);
    const auto p1 = argmax(s1.image);
    EXPECT_EQ(p1.row, p0.row);
    EXPECT_EQ(static_cast<long>(p1.col) - static_cast<long>(p0.col), 2);
}

TEST(Reconstruct, OutputFiniteForArbitraryCube) {
    auto raw = cube_for(Scene{}, small_geometry(6, 5), 8);
    Rng rng(3);
    for (auto& v : raw.data) v = {1e6 * rng.normal(), 1e6 * rng.normal()};
    for (double z : {1.0, 50.0, 1e4}) {
        const auto s = reconstruct_slice(raw, z);
        EXPECT_TRUE(all_finite(s.image.pixels));
    }
}

TEST(Reconstruct, FocusingFiltersMatchDirectPath) {
    const auto g = small_geometry(12, 10);
    const auto cfg = RadarConfig::iwr1642(16);
    const auto raw = phase_compensate(simulate_scan(make_plant(Wetness::Dry, 5).scene, g, cfg));
    const FocusingFilters f(g, cfg, {210.0, 260.0});
    const RangeMigration rm(raw);
    for (std::size_t i = 0; i < 2; ++i) {
        const auto a = rm.complex_slice(f, i);
        const auto b = rm.complex_slice(f.depths()[i]);
        for (std::size_t p = 0; p < a.pixels.size(); ++p) EXPECT_LT(std::abs(a.pixels[p] - b.pixels[p]), 1e-12);
    }
    const FocusingFilters other(small_geometry(12, 9), cfg, {210.0});
    EXPECT_THROW(rm.complex_slice(other, 0), ConfigError);
    EXPECT_THROW(rm.complex_slices(other), ConfigError);
}

TEST(Reconstruct, AllDepthPassMatchesPerDepth) {
    // Odd ny exercises the unpaired Nyquist bin of the folded filters.
    const auto g = small_geometry(11, 9);
    const auto cfg = RadarConfig::iwr1642(8);
    const auto raw = phase_compensate(simulate_scan(make_plant(Wetness::Wet, 3).scene, g, cfg));
    const FocusingFilters f(g, cfg, {205.0, 240.0, 330.0});
    const RangeMigration rm(raw);
    const auto all = rm.complex_slices(f);
    ASSERT_EQ(all.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto one = rm.complex_slice(f, i);
        const auto direct = rm.complex_slice(f.depths()[i]);
        for (std::size_t p = 0; p < one.pixels.size(); ++p) {
            EXPECT_EQ(all[i].pixels[p], one.pixels[p]);
            EXPECT_LT(std::abs(one.pixels[p] - direct.pixels[p]), 1e-12);
        }
    }
}

TEST(Backprojection, EmptyCubeIsZero) {
    const auto raw = cube_for(Scene{}, small_geometry(6, 4), 8);
    for (double v : backproject_oracle(raw, 200.0).image.pixels) EXPECT_EQ(v, 0.0);
}

TEST(Backprojection, MatchedFilterGain) {
    const auto g = small_geometry(32, 32);
    const auto raw = cube_for(scene_of({point(3, -2, 90)}), g, 8);
    const auto img = backproject_oracle(raw, 90.0).image;
    const auto peak = argmax(img);
    EXPECT_TRUE(near_pixel(peak, pixel_of(PixelGrid::for_geometry(g), 3.0, -2.0)));
    EXPECT_GT(peak.value, 10.0 * median(img.pixels));
}

TEST(Backprojection, ResolvesTwoPoints) {
    const auto g = small_geometry(40, 12);
    const auto raw = cube_for(scene_of({point(-15, 0, 200), point(15, 0, 200)}), g);
    const auto img = backproject_oracle(raw, 200.0).image;
    const auto grid = PixelGrid::for_geometry(g);
    for (double x : {-15.0, 15.0}) {
        // Strongest pixel in a window around each point is within a pixel of it.
        const auto [r0, c0] = pixel_of(grid, x, 0.0);
        PeakLocation best;
        for (long r = r0 - 4; r <= r0 + 4; ++r)
            for (long c = c0 - 4; c <= c0 + 4; ++c) {
                const double v = img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
                if (v > best.value) best = {static_cast<std::size_t>(r), static_cast<std::size_t>(c), v};
            }
        EXPECT_TRUE(near_pixel(best, {r0, c0}));
        // And it is a local maximum of the whole image.
        for (long dr = -1; dr <= 1; ++dr)
            for (long dc = -1; dc <= 1; ++dc)
                EXPECT_LE(img.at(best.row + static_cast<std::size_t>(dr + 1) - 1, best.col + static_cast<std::size_t>(dc + 1) - 1),
                          best.value);
    }
    // A dip separates them.
    const auto mid = pixel_of(grid, 0.0, 0.0);
    EXPECT_LT(img.at(static_cast<std::size_t>(mid.first), static_cast<std::size_t>(mid.second)), 0.5 * argmax(img).value);
}

TEST(DepthStack, SliceCount) {
    const auto raw = cube_for(Scene{}, small_geometry(4, 3), 8);
    EXPECT_EQ(depth_stack(raw, 250.0, 250.0, 1.0).size(), 1u);
    EXPECT_EQ(depth_stack(raw, 200.0, 300.0, 1.0).size(), 101u);
    EXPECT_EQ(depth_count(200.0, 300.0, 1.0), 101u);
    EXPECT_THROW(depth_stack(raw, 300.0, 200.0, 1.0), DomainError);
    EXPECT_THROW(depth_stack(raw, 200.0, 300.0, 0.0), DomainError);
}

TEST(DepthStack, EnergyPeaksAtTrueDepths) {
    const auto g = small_geometry(20, 16);
    const auto raw = cube_for(scene_of({point(-8, 0, 230), point(8, 0, 280)}), g, 32);
    const auto stack = depth_stack(raw, 200.0, 310.0, 1.0);
    std::vector<double> e;
    for (const auto& s : stack.slices) {
        double sum = 0.0;
        for (double v : s.image.pixels) sum += v * v;
        e.push_back(sum);
    }
    std::vector<double> maxima;
    for (std::size_t i = 1; i + 1 < e.size(); ++i)
        if (e[i] >= e[i - 1] && e[i] >= e[i + 1]) maxima.push_back(stack.slices[i].z0);
    ASSERT_GE(maxima.size(), 2u);
    auto has = [&](double z) {
        return std::any_of(maxima.begin(), maxima.end(), [&](double m) { return std::abs(m - z) <= 2.0; });
    };
    EXPECT_TRUE(has(230.0));
    EXPECT_TRUE(has(280.0));
}

TEST(Normalize, ConstantImageIsZero) {
    const Image img(5, 4, 3.5);
    for (double v : normalize01(img).pixels) EXPECT_EQ(v, 0.0);
}

TEST(Normalize, EndpointsAndIdempotence) {
    Image img(7, 5);
    Rng rng(2);
    for (auto& v : img.pixels) v = rng.uniform(-3.0, 8.0);
    const Image n = normalize01(img);
    EXPECT_EQ(*std::min_element(n.pixels.begin(), n.pixels.end()), 0.0);
    EXPECT_EQ(*std::max_element(n.pixels.begin(), n.pixels.end()), 1.0);
    EXPECT_EQ(normalize01(n), n);
}

TEST(Normalize, StackSharesOneScale) {
    DepthStack st;
    for (double peak : {1.0, 4.0}) {
        SarSlice s;
        s.image = Image(3, 2, 0.0);
        s.image.pixels[1] = peak;
        st.slices.push_back(s);
    }
    const auto n = normalize_stack(st);
    EXPECT_EQ(n.slices[0].image.pixels[1], 0.25);
    EXPECT_EQ(n.slices[1].image.pixels[1], 1.0);
}

TEST(Crop, FullRectIsIdentity) {
    Image img(6, 4);
    Rng rng(1);
    for (auto& v : img.pixels) v = rng.uniform();
    EXPECT_EQ(crop_fov(img, {0, 0, 6, 4}), img);
}

TEST(Crop, SinglePixel) {
    Image img(6, 4);
    img.at(2, 3) = 0.75;
    const Image c = crop_fov(img, {3, 2, 1, 1});
    ASSERT_EQ(c.pixels.size(), 1u);
    EXPECT_EQ(c.pixels[0], 0.75);
    EXPECT_THROW(crop_fov(img, {5, 0, 2, 1}), DomainError);
    EXPECT_THROW(crop_fov(img, {0, 0, 0, 1}), DomainError);
}

TEST(Crop, CalibrationAlignsCameraWithRadar) {
    // A single small blade: its centroid in the cropped camera image must sit
    // on the radar peak of a scatterer at the blade centre.
    DatasetConfig cfg;
    cfg.camera.noise = 0.0;
    Plant plant;
    plant.scene.label = Wetness::Dry;
    Leaf leaf;
    leaf.cx = 6.3;
    leaf.cy = -4.1;
    leaf.depth = 260.0;
    leaf.half_length = 2.5;
    leaf.half_width = 2.5;
    plant.leaves.push_back(leaf);
    cfg.plant.pot_y = 1e3;  // keep the pot out of view
    const RgbImage rgb = crop_fov(render_camera(plant, cfg, 1), cfg.calibration());
    double sr = 0.0, sc = 0.0, n = 0.0;
    for (std::size_t r = 0; r < rgb.height(); ++r)
        for (std::size_t c = 0; c < rgb.width(); ++c)
            if (rgb.at(1, r, c) > 0.4) {
                sr += static_cast<double>(r);
                sc += static_cast<double>(c);
                n += 1.0;
            }
    ASSERT_GT(n, 0.0);
    const auto raw = phase_compensate(simulate_scan(scene_of({point(leaf.cx, leaf.cy, leaf.depth)}), cfg.geometry, cfg.radar));
    const auto peak = argmax(reconstruct_slice(raw, leaf.depth).image);
    EXPECT_NEAR(sr / n, static_cast<double>(peak.row), 1.0);
    EXPECT_NEAR(sc / n, static_cast<double>(peak.col), 1.0);
}

TEST(Psf, MainLobeNarrowsWithAperture) {
    const auto cfg = RadarConfig::iwr1642(16);
    const double pitch = cfg.center_wavelength_mm() / 2.0;
    std::vector<double> widths;
    for (double L : {100.0, 125.0, 150.0, 175.0, 200.0}) {
        const auto n = static_cast<std::size_t>(std::lround(L / pitch));
        const auto g = ScanGeometry::uniform(n, 8, pitch, pitch);
        const auto raw = phase_compensate(simulate_scan(scene_of({point(0, 0, 250)}), g, cfg));
        const auto img = reconstruct_slice(raw, 250.0).image;
        widths.push_back(mainlobe_width_3db(img, argmax(img), 0.5 * pitch));
    }
    for (std::size_t i = 1; i < widths.size(); ++i) EXPECT_LE(widths[i], widths[i - 1]);
    EXPECT_GE(widths.front() / widths.back(), 1.5);
}
