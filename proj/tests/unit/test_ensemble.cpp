#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "odx/ensemble.hpp"
#include "odx/error.hpp"
#include "odx/eval.hpp"
#include "odx/features.hpp"
#include "odx/synthgen.hpp"

#include "../support/fixtures.hpp"

using namespace odx;

namespace {

FeatureVector vec(std::size_t dim, std::vector<std::pair<std::uint32_t, std::uint32_t>> e) {
    return {dim, std::move(e)};
}

// t1: x0 <= 1.5 ? a : b
// t2: x2 <= 0.5 ? c : (x1 <= 3 ? d : e)
TreeEnsembleModel two_trees(EnsembleKind kind, double a, double b, double c, double d, double e) {
    TreeEnsembleModel m;
    m.kind = kind;
    m.dimension = 3;
    DecisionTree t1{{0, -1, -1}, {1.5, 0, 0}, {1, -1, -1}, {2, -1, -1}, {0, a, b}};
    DecisionTree t2{{2, -1, 1, -1, -1}, {0.5, 0, 3, 0, 0}, {1, -1, 3, -1, -1}, {2, -1, 4, -1, -1}, {0, c, 0, d, e}};
    m.trees = {t1, t2};
    return m;
}

double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

// Two planted marker features; label is positive when either is present.
Dataset planted(std::size_t n, std::uint64_t seed) {
    Dataset d;
    d.dimension = 6;
    std::uint64_t s = seed;
    auto next = [&] {
        s = s * 6364136223846793005ULL + 1442695040888963407ULL;
        return (s >> 33) % 100;
    };
    for (std::size_t i = 0; i < n; ++i) {
        const bool pos = i % 3 == 0;
        FeatureVector x{6, {}};
        if (pos) x.entries.push_back({next() < 50 ? 0u : 1u, 1 + static_cast<std::uint32_t>(next() % 3)});
        for (std::uint32_t f = 2; f < 6; ++f) {
            if (next() < 40) x.entries.push_back({f, 1 + static_cast<std::uint32_t>(next() % 4)});
        }
        std::sort(x.entries.begin(), x.entries.end());
        d.x.push_back(std::move(x));
        d.y.push_back(pos ? Label::Overdose : Label::NoOverdose);
    }
    return d;
}

double f1_on(const TreeEnsembleModel& m, const Dataset& d) {
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < d.x.size(); ++i) cm.add(predict_ensemble(m, d.x[i]).label, d.y[i]);
    return f1_or_zero(cm);
}

}  // namespace

TEST(Ensemble, HandTracedForest) {
    const auto m = two_trees(EnsembleKind::RandomForest, 0.2, 0.9, 0.7, 0.1, 0.6);
    // Votes: x0=2 -> 0.9 yes; x2=0 -> 0.7 yes.
    auto p = predict_ensemble(m, vec(3, {{0, 2}}));
    EXPECT_EQ(p.label, Label::Overdose);
    EXPECT_DOUBLE_EQ(*p.score, 1.0);
    // Empty vector follows the <= branches: 0.2 no, 0.7 yes.
    p = predict_ensemble(m, vec(3, {}));
    EXPECT_DOUBLE_EQ(*p.score, 0.5);
    EXPECT_EQ(p.label, Label::Overdose);
    // 0.2 no; x2=1, x1=1 -> 0.1 no.
    p = predict_ensemble(m, vec(3, {{1, 1}, {2, 1}}));
    EXPECT_DOUBLE_EQ(*p.score, 0.0);
    EXPECT_EQ(p.label, Label::NoOverdose);
    // 0.2 no; x1=5 -> 0.6 yes.
    EXPECT_DOUBLE_EQ(*predict_ensemble(m, vec(3, {{1, 5}, {2, 1}})).score, 0.5);
}

TEST(Ensemble, HandTracedBoosting) {
    const auto m = two_trees(EnsembleKind::GradientBoosted, -0.4, 0.9, 0.7, -0.8, 0.6);
    auto p = predict_ensemble(m, vec(3, {{0, 2}}));
    EXPECT_NEAR(*p.score, sigmoid(0.9 + 0.7), 1e-12);
    EXPECT_EQ(p.label, Label::Overdose);
    p = predict_ensemble(m, vec(3, {{1, 1}, {2, 1}}));
    EXPECT_NEAR(*p.score, sigmoid(-0.4 - 0.8), 1e-12);
    EXPECT_EQ(p.label, Label::NoOverdose);
}

TEST(Ensemble, DimensionMismatch) {
    const auto m = two_trees(EnsembleKind::RandomForest, 0, 1, 0, 1, 0);
    EXPECT_THROW(predict_ensemble(m, vec(4, {})), ValidationError);
}

TEST(Ensemble, AllTreesPositive) {
    const auto m = two_trees(EnsembleKind::RandomForest, 1, 1, 1, 1, 1);
    const auto p = predict_ensemble(m, vec(3, {{1, 2}}));
    EXPECT_EQ(p.label, Label::Overdose);
    EXPECT_DOUBLE_EQ(*p.score, 1.0);
}

TEST(Ensemble, SingleClassIsTrainingError) {
    auto d = planted(30, 1);
    for (auto& y : d.y) y = Label::NoOverdose;
    EXPECT_THROW(fit_ensemble(EnsembleKind::RandomForest, d, {}, 1), TrainingError);
    EXPECT_THROW(fit_ensemble(EnsembleKind::GradientBoosted, d, {}, 1), TrainingError);
}

TEST(Ensemble, LearnsPlantedMarkers) {
    const auto train = planted(600, 1), valid = planted(300, 2), test = planted(300, 3);
    for (auto kind : {EnsembleKind::RandomForest, EnsembleKind::GradientBoosted}) {
        HyperGrid grid{{30}, {4}, {1}, {0.3}};
        const auto m = train_ensemble(kind, train, grid, valid, 5, 2);
        EXPECT_GE(m.validation_f1, 0.75) << to_string(kind);
        EXPECT_GE(f1_on(m, test), 0.75) << to_string(kind);
    }
}

TEST(Ensemble, SinglePointAndTieBreak) {
    const auto train = planted(300, 4), valid = planted(150, 5);
    HyperGrid one{{10}, {3}, {1}, {0.3}};
    auto m = train_ensemble(EnsembleKind::GradientBoosted, train, one, valid, 9);
    EXPECT_EQ(m.grid_index, 0u);
    EXPECT_EQ(m.params, (HyperParams{10, 3, 1, 0.3}));
    HyperGrid twins{{10, 10}, {3}, {1}, {0.3}};
    std::vector<GridResult> trace;
    m = train_ensemble(EnsembleKind::GradientBoosted, train, twins, valid, 9, 2, &trace);
    ASSERT_EQ(trace.size(), 2u);
    EXPECT_EQ(trace[0].validation_f1, trace[1].validation_f1);
    EXPECT_EQ(m.grid_index, 0u);
}

TEST(Ensemble, DeterministicForFixedSeed) {
    const auto train = planted(300, 6), probe = planted(100, 7);
    for (auto kind : {EnsembleKind::RandomForest, EnsembleKind::GradientBoosted}) {
        HyperParams hp{20, 4, 2, 0.2};
        const auto a = fit_ensemble(kind, train, hp, 11, 1);
        const auto b = fit_ensemble(kind, train, hp, 11, 3);
        EXPECT_EQ(a.trees, b.trees);
        for (const auto& x : probe.x) EXPECT_EQ(predict_ensemble(a, x), predict_ensemble(b, x));
    }
}

TEST(Ensemble, RespectsDepthAndLeafSize) {
    const auto train = planted(300, 8);
    const auto m = fit_ensemble(EnsembleKind::RandomForest, train, {5, 2, 1, 0.1}, 3);
    for (const auto& t : m.trees) EXPECT_LE(t.size(), 7u);
}

TEST(Ensemble, ModelJsonRoundTrip) {
    const auto train = planted(200, 9);
    auto m = fit_ensemble(EnsembleKind::GradientBoosted, train, {5, 3, 1, 0.3}, 3);
    m.vocabulary_hash = 0xDEADBEEFCAFEF00DULL;
    fixture::TempDir dir("model");
    m.save(dir / "m.json");
    const auto back = TreeEnsembleModel::load(dir / "m.json");
    EXPECT_EQ(back.trees, m.trees);
    EXPECT_EQ(back.vocabulary_hash, m.vocabulary_hash);
    EXPECT_EQ(back.params, m.params);
    EXPECT_EQ(back.kind, m.kind);
}

TEST(Ensemble, CorruptModelRejected) {
    auto j = two_trees(EnsembleKind::RandomForest, 0, 1, 0, 1, 0).to_json();
    j["trees"][0]["left"][0] = 17;
    EXPECT_THROW(TreeEnsembleModel::from_json(j), ValidationError);
    auto k = two_trees(EnsembleKind::RandomForest, 0, 1, 0, 1, 0).to_json();
    k["format"] = "something-else";
    EXPECT_THROW(TreeEnsembleModel::from_json(k), ValidationError);
}

TEST(Ensemble, GridValidation) {
    EXPECT_EQ(HyperGrid::default_for(EnsembleKind::RandomForest).points(EnsembleKind::RandomForest).size(), 8u);
    EXPECT_EQ(HyperGrid::default_for(EnsembleKind::GradientBoosted).points(EnsembleKind::GradientBoosted).size(), 8u);
    HyperGrid bad{{0}, {3}, {1}, {0.1}};
    EXPECT_THROW(bad.validate(EnsembleKind::RandomForest), ValidationError);
    HyperGrid no_rate{{10}, {3}, {1}, {}};
    EXPECT_THROW(no_rate.validate(EnsembleKind::GradientBoosted), ValidationError);
    EXPECT_NO_THROW(no_rate.validate(EnsembleKind::RandomForest));
}

namespace {

double synthetic_test_f1(double signal) {
    GeneratorConfig cfg;
    cfg.signal_strength = signal;
    auto split = [&](Split s) {
        return build_task_set(generate_population(cfg, s, 4).patients, make_window(7), s).instances;
    };
    const auto train = split(Split::Train), valid = split(Split::Valid), test = split(Split::Test);
    const auto vocab = build_vocabulary(train);
    auto data = [&](const std::vector<PredictionInstance>& v) {
        Dataset d;
        d.dimension = vocab.size();
        for (const auto& i : v) {
            d.x.push_back(vectorize(i, vocab, 30));
            d.y.push_back(i.label);
        }
        return d;
    };
    const auto m = train_ensemble(EnsembleKind::GradientBoosted, data(train), {{100}, {3}, {1}, {0.3}}, data(valid), 42, 4);
    return f1_on(m, data(test));
}

}  // namespace

TEST(Ensemble, F1GrowsWithSignal) {
    const double none = synthetic_test_f1(0.0);
    const double half = synthetic_test_f1(0.4);
    const double strong = synthetic_test_f1(0.8);
    EXPECT_LT(none, half);
    EXPECT_LT(half, strong);
    EXPECT_GE(strong, 0.75);
}
