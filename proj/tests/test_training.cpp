#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"

using namespace hydra;
using hydra::test::tiny_dataset;
using hydra::test::tiny_model;

namespace {

const std::vector<Sample>& tiny_data() {
    static const std::vector<Sample> data = synth_dataset(8, tiny_dataset(), 5);
    return data;
}

TrainHyper tiny_hyper() {
    TrainHyper h;
    h.model = tiny_model();
    h.phase1_epochs = 2;
    h.phase2_epochs = 2;
    h.batch_size = 4;
    h.augment = AugmentPolicy{};
    return h;
}

bool same_sample(const Sample& a, const Sample& b) {
    if (a.raw.data != b.raw.data || !(a.rgb == b.rgb) || a.label != b.label || a.stack.size() != b.stack.size())
        return false;
    for (std::size_t i = 0; i < a.stack.size(); ++i)
        if (!(a.stack.slices[i].image == b.stack.slices[i].image) || a.stack.slices[i].z0 != b.stack.slices[i].z0)
            return false;
    return a.meta.wind_mm == b.meta.wind_mm && a.meta.lighting == b.meta.lighting &&
           a.meta.rgb_dropped == b.meta.rgb_dropped && a.meta.scene_seed == b.meta.scene_seed;
}

}  // namespace

TEST(Synth, TwoSamplesOnePerClass) {
    const auto d = synth_dataset(2, tiny_dataset(), 1);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_NE(d[0].label, d[1].label);
    EXPECT_THROW(synth_dataset(3, tiny_dataset(), 1), DomainError);
    EXPECT_THROW(synth_dataset(0, tiny_dataset(), 1), DomainError);
}

TEST(Synth, DeterministicPerSeed) {
    auto cfg = tiny_dataset();
    const auto a = synth_dataset(4, cfg, 9);
    cfg.threads = 3;
    const auto b = synth_dataset(4, cfg, 9);
    const auto c = synth_dataset(4, cfg, 10);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_TRUE(same_sample(a[i], b[i]));
        EXPECT_FALSE(same_sample(a[i], c[i]));
    }
}

TEST(Synth, RastersAlignedAndNormalized) {
    const auto cfg = tiny_dataset();
    for (const auto& s : tiny_data()) {
        EXPECT_EQ(s.stack.size(), cfg.depths().size());
        for (const auto& sl : s.stack.slices) {
            EXPECT_EQ(sl.image.width, s.rgb.width());
            EXPECT_EQ(sl.image.height, s.rgb.height());
            for (double v : sl.image.pixels) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
            }
        }
    }
}

// Threshold sweep on the un-normalized mean slice magnitude of the default
// generator.
TEST(Synth, MeanSarMagnitudeSeparatesClasses) {
    const DatasetConfig cfg;
    const auto filters = make_filters(cfg);
    const auto data = synth_dataset(100, cfg, 77, filters.get());
    std::vector<std::pair<double, int>> feat;
    for (const auto& s : data) {
        double m = 0.0;
        std::size_t n = 0;
        for (const auto& sl : depth_stack(s.raw, *filters).slices)
            for (double v : sl.image.pixels) {
                m += v;
                ++n;
            }
        feat.emplace_back(m / static_cast<double>(n), s.label == Wetness::Wet ? 1 : 0);
    }
    std::sort(feat.begin(), feat.end());
    std::size_t best = 0;
    for (std::size_t cut = 0; cut <= feat.size(); ++cut) {
        std::size_t ok = 0;
        for (std::size_t i = 0; i < feat.size(); ++i) ok += (i >= cut) == (feat[i].second == 1);
        best = std::max({best, ok, feat.size() - ok});
    }
    EXPECT_GE(static_cast<double>(best) / static_cast<double>(feat.size()), 0.8);
}

TEST(Augment, NullPolicyIsIdentity) {
    const auto& s = tiny_data()[1];
    for (std::uint64_t seed : {0u, 1u, 99u}) EXPECT_TRUE(same_sample(augment(s, AugmentPolicy{}, seed), s));
    AugmentPolicy p;
    p.wind_prob = 0.3;
    EXPECT_TRUE(same_sample(augment(s, p, 4), s));
    EXPECT_TRUE(same_sample(apply_wind(s, 0.0, 5, *make_filters(tiny_dataset())), s));
    EXPECT_EQ(apply_lighting(s.rgb, 1.0), s.rgb);
}

TEST(Augment, DropoutAndLightingStatistics) {
    Sample s;
    s.rgb = RgbImage(2, 2, 0.25);
    const auto policy = AugmentPolicy::standard();
    AugmentPolicy no_wind = policy;
    no_wind.wind_max_mm = 0.0;
    const int n = 10000;
    int dropped = 0;
    double light = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto a = augment(s, no_wind, static_cast<std::uint64_t>(i));
        dropped += a.meta.rgb_dropped ? 1 : 0;
        light += a.meta.lighting;
        EXPECT_GE(a.meta.lighting, 0.4);
        EXPECT_LE(a.meta.lighting, 1.2);
    }
    EXPECT_NEAR(dropped / static_cast<double>(n), 0.2, 0.005);
    EXPECT_NEAR(light / n, 0.8, 0.01);
}

TEST(Augment, WindChangesStackOnly) {
    const auto& s = tiny_data()[0];
    AugmentPolicy p;
    p.wind_max_mm = 2.0;
    const auto a = augment(s, p, 3, make_filters(tiny_dataset()).get());
    EXPECT_GT(a.meta.wind_mm, 0.0);
    EXPECT_LE(a.meta.wind_mm, 2.0);
    EXPECT_EQ(a.rgb, s.rgb);
    EXPECT_NE(a.raw.data, s.raw.data);
    EXPECT_TRUE(same_sample(augment(s, p, 3), a));  // filters built on demand agree
}

TEST(Augment, RejectsBadPolicy) {
    AugmentPolicy p;
    p.rgb_dropout = 1.5;
    EXPECT_THROW(augment(tiny_data()[0], p, 1), ConfigError);
    p = {};
    p.lighting_min = 2.0;
    EXPECT_THROW(augment(tiny_data()[0], p, 1), ConfigError);
}

TEST(Train, LearningRateSchedule) {
    using detail::scheduled_lr;
    EXPECT_DOUBLE_EQ(scheduled_lr(0.2, 0, 4, 20, true), 0.05);
    EXPECT_DOUBLE_EQ(scheduled_lr(0.2, 3, 4, 20, true), 0.2);
    EXPECT_DOUBLE_EQ(scheduled_lr(0.2, 4, 4, 20, true), 0.2);
    EXPECT_NEAR(scheduled_lr(0.2, 12, 4, 20, true), 0.1, 1e-15);
    EXPECT_LT(scheduled_lr(0.2, 19, 4, 20, true), 0.2 * 0.01);
    EXPECT_DOUBLE_EQ(scheduled_lr(0.2, 19, 4, 20, false), 0.2);
    EXPECT_DOUBLE_EQ(scheduled_lr(0.2, 0, 0, 20, false), 0.2);
}

TEST(Train, ZeroLearningRateLeavesParams) {
    auto h = tiny_hyper();
    h.lr = 0.0;
    h.pretrain_lr = 0.0;
    const auto r = train(tiny_data(), h);
    EXPECT_EQ(r.params.values, initial_params(tiny_data(), h).values);
    EXPECT_EQ(r.history.size(), 4u);
}

TEST(Train, MemorizesSingleSample) {
    auto h = tiny_hyper();
    h.phase1_epochs = 5;
    h.phase2_epochs = 60;
    h.batch_size = 1;
    const std::vector<Sample> one{tiny_data()[1]};
    const auto r = train(one, h);
    EXPECT_LT(r.history.back().loss, 0.01);
    EXPECT_EQ(r.history.back().accuracy, 1.0);
}

TEST(Train, BitIdenticalAcrossRunsAndThreads) {
    auto h = tiny_hyper();
    h.augment = AugmentPolicy::standard();
    const auto a = train(tiny_data(), h);
    h.threads = 3;
    const auto b = train(tiny_data(), h);
    EXPECT_EQ(a.params.values, b.params.values);
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        EXPECT_EQ(a.history[i].loss, b.history[i].loss);
        EXPECT_EQ(a.history[i].accuracy, b.history[i].accuracy);
    }
    h.seed = 2;
    EXPECT_NE(train(tiny_data(), h).params.values, a.params.values);
}

TEST(Train, HistoryCoversBothPhases) {
    const auto r = train(tiny_data(), tiny_hyper());
    ASSERT_EQ(r.history.size(), 4u);
    EXPECT_EQ(r.history[0].phase, 1);
    EXPECT_EQ(r.history[3].phase, 2);
    EXPECT_EQ(r.history[3].epoch, 1u);
    for (const auto& e : r.history) EXPECT_TRUE(std::isfinite(e.loss));
}

TEST(Train, DivergenceIsReported) {
    auto h = tiny_hyper();
    h.clip_norm = 0.0;
    h.lr = 1e200;
    h.pretrain_lr = 1e200;
    EXPECT_THROW(train(tiny_data(), h), NumericError);
}

TEST(Train, RejectsEmptyDataAndBadHyper) {
    EXPECT_THROW(train({}, tiny_hyper()), DomainError);
    auto h = tiny_hyper();
    h.batch_size = 0;
    EXPECT_THROW(train(tiny_data(), h), ConfigError);
    h = tiny_hyper();
    h.momentum = 1.0;
    EXPECT_THROW(train(tiny_data(), h), ConfigError);
}

TEST(Folds, PartitionStratifiedAndBalanced) {
    std::vector<Wetness> labels;
    for (int i = 0; i < 23; ++i) labels.push_back(i % 3 == 0 ? Wetness::Wet : Wetness::Dry);
    const auto plan = make_fold_plan(labels, 5, 4, 11);
    ASSERT_EQ(plan.assignments.size(), 4u);
    const double wet_share = 8.0 / 23.0;
    for (std::size_t r = 0; r < 4; ++r) {
        std::size_t lo = 100, hi = 0, total = 0;
        for (std::size_t f = 0; f < 5; ++f) {
            const auto held = plan.members(r, f, true);
            lo = std::min(lo, held.size());
            hi = std::max(hi, held.size());
            total += held.size();
            double wet = 0;
            for (auto i : held) wet += labels[i] == Wetness::Wet;
            EXPECT_LE(std::abs(wet - wet_share * static_cast<double>(held.size())), 1.0);
            EXPECT_EQ(plan.members(r, f, false).size() + held.size(), labels.size());
        }
        EXPECT_LE(hi - lo, 1u);
        EXPECT_EQ(total, labels.size());
    }
    EXPECT_NE(plan.assignments[0], plan.assignments[1]);
    EXPECT_EQ(make_fold_plan(labels, 5, 4, 11).assignments, plan.assignments);
}

TEST(Folds, Errors) {
    EXPECT_THROW(make_fold_plan({Wetness::Dry, Wetness::Wet}, 3, 1, 0), DomainError);
    EXPECT_THROW(make_fold_plan({Wetness::Dry, Wetness::Wet}, 1, 1, 0), DomainError);
    EXPECT_THROW(make_fold_plan({Wetness::Dry, Wetness::Wet}, 2, 0, 0), DomainError);
    // Holding out the only wet sample leaves training without that class.
    EXPECT_THROW(make_fold_plan({Wetness::Dry, Wetness::Dry, Wetness::Dry, Wetness::Wet}, 4, 1, 0),
                 StratificationError);
}

TEST(CrossValidation, LeaveOneOutRuns) {
    const std::vector<Sample> data(tiny_data().begin(), tiny_data().begin() + 4);
    auto h = tiny_hyper();
    h.phase1_epochs = 1;
    h.phase2_epochs = 1;
    const auto cv = kfold_cv(data, 4, 1, h, 3);
    ASSERT_EQ(cv.folds.size(), 4u);
    for (const auto& f : cv.folds) EXPECT_EQ(f.metrics.total(), 1u);
}

TEST(CrossValidation, AggregateMatchesHandComputation) {
    auto h = tiny_hyper();
    h.phase1_epochs = 1;
    h.phase2_epochs = 1;
    const auto cv = kfold_cv(tiny_data(), 4, 2, h, 8);
    ASSERT_EQ(cv.folds.size(), 8u);
    double sum = 0.0;
    for (const auto& f : cv.folds) sum += f.metrics.accuracy;
    const double mean = sum / 8.0;
    double ss = 0.0;
    for (const auto& f : cv.folds) ss += (f.metrics.accuracy - mean) * (f.metrics.accuracy - mean);
    EXPECT_NEAR(cv.accuracy.mean, mean, 1e-15);
    EXPECT_NEAR(cv.accuracy.stddev, std::sqrt(ss / 7.0), 1e-15);
    EXPECT_EQ(cv.accuracy.count, 8u);
}

TEST(CrossValidation, PercentFormat) {
    EXPECT_EQ(format_percent({0.9621, 0.0257, 10}), "96.21% ± 2.57%");
    const auto a = aggregate({0.5});
    EXPECT_EQ(a.stddev, 0.0);
    EXPECT_THROW(aggregate({}), DomainError);
}

TEST(Evaluate, ConstantWetPredictorOnWetSet) {
    std::vector<Sample> wet;
    for (const auto& s : tiny_data())
        if (s.label == Wetness::Wet) wet.push_back(s);
    ModelParams p(tiny_model());
    *p.value(p.classifier_bias()) = 1e-3;
    const auto m = evaluate(p, wet);
    EXPECT_EQ(m.accuracy, 1.0);
    EXPECT_EQ(m.tp, wet.size());
    for (double y : predict(p, wet)) EXPECT_GT(y, 0.5);
}

TEST(Evaluate, EmptyListThrows) {
    EXPECT_THROW(evaluate(ModelParams(tiny_model()), {}), DomainError);
}

TEST(Evaluate, AccuracyIsConfusionIdentity) {
    const auto p = train(tiny_data(), tiny_hyper()).params;
    for (bool blackout : {false, true}) {
        const auto m = evaluate(p, tiny_data(), {blackout, 0.0, 0});
        EXPECT_EQ(m.total(), tiny_data().size());
        EXPECT_EQ(m.accuracy, static_cast<double>(m.tp + m.tn) / static_cast<double>(m.total()));
    }
    const auto c = confusion({0.9, 0.2, 0.6, 0.1, 0.5}, {Wetness::Wet, Wetness::Wet, Wetness::Dry, Wetness::Dry, Wetness::Dry});
    EXPECT_EQ(c.tp, 1u);
    EXPECT_EQ(c.fn, 1u);
    EXPECT_EQ(c.fp, 2u);
    EXPECT_EQ(c.tn, 1u);
    EXPECT_DOUBLE_EQ(c.accuracy, 0.4);
}

TEST(Evaluate, BlackoutAndWindConditions) {
    const auto p = init_params(tiny_model(), 3);
    const auto base = predict(p, tiny_data());
    const auto dark = predict(p, tiny_data(), {true, 0.0, 0});
    const auto windy = predict(p, tiny_data(), {false, 2.0, 1});
    EXPECT_NE(base, dark);
    EXPECT_NE(base, windy);
    EXPECT_EQ(windy, predict(p, tiny_data(), {false, 2.0, 1}));
}
