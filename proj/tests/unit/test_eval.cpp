#include <gtest/gtest.h>

#include <random>

#include "odx/error.hpp"
#include "odx/eval.hpp"
#include "odx/metrics.hpp"
#include "odx/synthgen.hpp"

#include "../support/oracles.hpp"

using namespace odx;

namespace {

PredictionInstance gold(const std::string& id, CohortLabel c) {
    PredictionInstance i;
    i.enrol_id = id;
    i.cohort = c;
    i.label = c == CohortLabel::Case ? Label::Overdose : Label::NoOverdose;
    return i;
}

PredictionOutcome said(const std::string& id, Label l) {
    Prediction p;
    p.instance_id = id;
    p.label = l;
    return {id, p, "", ""};
}

PredictionOutcome failed(const std::string& id) { return {id, std::nullopt, "parse", "garbage"}; }

const auto Y = Label::Overdose;
const auto N = Label::NoOverdose;

std::vector<PredictionInstance> mixed() {
    return {gold("c1", CohortLabel::Case), gold("c2", CohortLabel::Case),
            gold("e1", CohortLabel::ControlExposed), gold("e2", CohortLabel::ControlExposed),
            gold("n1", CohortLabel::ControlNonExposed), gold("n2", CohortLabel::ControlNonExposed)};
}

}  // namespace

TEST(Metrics, Perfect) {
    const auto m = metrics_from({5, 0, 7, 0});
    EXPECT_EQ(m.precision, 1.0);
    EXPECT_EQ(m.recall, 1.0);
    EXPECT_EQ(m.specificity, 1.0);
    EXPECT_EQ(m.f1, 1.0);
}

TEST(Metrics, WorkedFixture) {
    const auto m = metrics_from({3, 1, 5, 1});
    EXPECT_DOUBLE_EQ(*m.precision, 0.75);
    EXPECT_DOUBLE_EQ(*m.recall, 0.75);
    EXPECT_NEAR(*m.specificity, 0.8333333333333334, 1e-12);
    EXPECT_DOUBLE_EQ(*m.f1, 0.75);
}

TEST(Metrics, AllNegativeOnMixedSet) {
    const auto m = metrics_from({0, 0, 6, 4});
    EXPECT_FALSE(m.precision);
    EXPECT_EQ(m.recall, 0.0);
    EXPECT_EQ(m.specificity, 1.0);
    EXPECT_FALSE(m.f1);
    EXPECT_EQ(f1_or_zero({0, 0, 6, 4}), 0.0);
}

TEST(Metrics, MatchesCountingOracle) {
    std::mt19937_64 rng(99);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + rng() % 40;
        std::vector<bool> p(n), g(n);
        std::vector<Label> pl(n), gl(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = rng() % 2;
            g[i] = rng() % 3 == 0;
            pl[i] = p[i] ? Y : N;
            gl[i] = g[i] ? Y : N;
        }
        const auto cm = confusion(pl, gl);
        const auto m = metrics_from(cm);
        const auto b = oracle::brute_metrics(p, g);
        ASSERT_EQ(long(cm.tp), b.tp);
        ASSERT_EQ(long(cm.tn), b.tn);
        ASSERT_EQ(m.f1.has_value(), b.f1.has_value());
        if (b.f1) EXPECT_NEAR(*m.f1, *b.f1, 1e-12);
        if (b.specificity) EXPECT_NEAR(*m.specificity, *b.specificity, 1e-12);
    }
}

TEST(Eval, AlignsById) {
    const auto g = mixed();
    std::vector<PredictionOutcome> p{said("n2", N), said("n1", N), said("e2", N),
                                     said("e1", Y), said("c2", N), said("c1", Y)};
    const auto r = compute_metrics(p, g);
    EXPECT_EQ(r.confusion, (ConfusionMatrix{1, 1, 3, 1}));
    EXPECT_EQ(r.n_instances, 6u);
}

TEST(Eval, IdMismatchErrors) {
    const auto g = mixed();
    std::vector<PredictionOutcome> p{said("c1", Y), said("c2", Y), said("e1", N), said("e2", N), said("n1", N)};
    EXPECT_THROW(compute_metrics(p, g), ValidationError);
    p.push_back(said("zz", N));
    EXPECT_THROW(compute_metrics(p, g), ValidationError);
    p.back() = said("c1", N);
    EXPECT_THROW(compute_metrics(p, g), ValidationError);
}

TEST(Eval, FailurePolicies) {
    const auto g = mixed();
    std::vector<PredictionOutcome> p{failed("c1"), said("c2", Y), said("e1", N), said("e2", N), said("n1", N), failed("n2")};
    const auto neg = compute_metrics(p, g, FailurePolicy::ScoreNegative);
    EXPECT_EQ(neg.confusion, (ConfusionMatrix{1, 0, 4, 1}));
    EXPECT_EQ(neg.n_errors, 2u);
    const auto ex = compute_metrics(p, g, FailurePolicy::Exclude);
    EXPECT_EQ(ex.confusion, (ConfusionMatrix{1, 0, 3, 0}));
    EXPECT_EQ(ex.n_errors, 2u);
    EXPECT_EQ(ex.subgroups.n_non_exposed, 1u);
}

TEST(Subgroups, AllControlsNegative) {
    const auto g = mixed();
    std::vector<PredictionOutcome> p{said("c1", Y), said("c2", Y), said("e1", N), said("e2", N), said("n1", N), said("n2", N)};
    const auto s = subgroup_accuracy(p, g);
    EXPECT_EQ(s.exposed, 1.0);
    EXPECT_EQ(s.non_exposed, 1.0);
}

TEST(Subgroups, HalfExposedPositive) {
    const auto g = mixed();
    std::vector<PredictionOutcome> p{said("c1", Y), said("c2", Y), said("e1", Y), said("e2", N), said("n1", N), said("n2", N)};
    const auto s = subgroup_accuracy(p, g);
    EXPECT_EQ(s.exposed, 0.5);
    EXPECT_EQ(s.non_exposed, 1.0);
}

TEST(Subgroups, EmptyGroupIsNull) {
    std::vector<PredictionInstance> g{gold("c1", CohortLabel::Case), gold("n1", CohortLabel::ControlNonExposed)};
    const auto s = subgroup_accuracy(std::vector<PredictionOutcome>{said("c1", Y), said("n1", Y)}, g);
    EXPECT_FALSE(s.exposed);
    EXPECT_EQ(s.non_exposed, 0.0);
}

namespace {

struct Corpus {
    std::vector<PredictionInstance> instances;
    CodeDictionary dict = CodePools::defaults().dictionary();
    PromptTemplates templates = PromptTemplates::defaults();

    Corpus() {
        GeneratorConfig cfg;
        cfg.n_case = 60;
        cfg.n_control = 120;
        instances = build_task_set(generate_population(cfg, Split::Test, 2).patients, make_window(7), Split::Test).instances;
    }
    RenderSettings settings() const { return {PromptFormat::DetailedCode, 30, FieldMask{}, &dict, &templates, 2}; }
};

}  // namespace

TEST(Sweep, FiveRowsAndConstantMockIsFlat) {
    Corpus c;
    MockChatBackend::Options o;
    o.policy = MockChatBackend::Policy::ConstantYes;
    MockChatBackend m(o);
    const auto rows = run_visits_sweep(make_llm_predictor(m, LLMConfig{}), c.instances, kDefaultVisitLimits, c.settings());
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[0].setting, "5");
    for (const auto& r : rows) EXPECT_EQ(r.report.metrics.f1, rows[0].report.metrics.f1);
    for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_GT(rows[i].mean_tokens, rows[i - 1].mean_tokens);
}

TEST(Ablation, SevenRowsDiagnosesMatter) {
    Corpus c;
    MockChatBackend::Options o;
    o.policy = MockChatBackend::Policy::DxMarker;
    MockChatBackend m(o);
    const auto rows = run_field_ablation(make_llm_predictor(m, LLMConfig{}), c.instances, c.settings());
    ASSERT_EQ(rows.size(), 7u);
    std::map<std::string, double> f1;
    for (const auto& r : rows) f1[r.setting] = r.report.metrics.f1.value_or(0);
    for (const char* with_dx : {"dx", "dx,proc", "dx,rx", "dx,proc,rx"}) EXPECT_GT(f1.at(with_dx), f1.at("proc")) << with_dx;
}

TEST(Sweep, ErrorsNameTheLimit) {
    Corpus c;
    MockChatBackend m(MockChatBackend::Options{});
    const int limits[] = {5, 0};
    try {
        run_visits_sweep(make_llm_predictor(m, LLMConfig{}), c.instances, limits, c.settings());
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("visit limit 0"), std::string::npos);
    }
}

TEST(Cost, Arithmetic) {
    PromptDocument d;
    d.token_estimate = 1000;
    std::vector<PromptDocument> docs{d};
    EXPECT_EQ(format_usd(estimate_cost(docs, {0, 0, 5})), "$0.0000");
    EXPECT_DOUBLE_EQ(estimate_cost(docs, {0.0025, 0.0, 5}), 0.0025);
    EXPECT_EQ(format_usd(estimate_cost(docs, {0.0025, 0.0, 5})), "$0.0025");
    docs.push_back(d);
    docs.back().token_estimate = 3000;
    // mean input 2000 tokens -> 0.005, plus 5 output tokens at 0.01/1k.
    EXPECT_NEAR(estimate_cost(docs, {0.0025, 0.01, 5}), 0.00505, 1e-15);
    EXPECT_EQ(estimate_cost({}, CostModel{}), 0.0);
    EXPECT_THROW(CostModel::from_json(nlohmann::json{{"input_price_per_1k", -1}}), ValidationError);
}

TEST(Report, TableHasFourMetricColumns) {
    SweepRow row{"all", {}, 0};
    row.report.metrics = metrics_from({3, 1, 5, 1});
    const auto t = render_table(std::span(&row, 1), "Setting", false);
    for (const char* h : {"Precision", "Recall", "Specificity", "F1-score"}) EXPECT_NE(t.find(h), std::string::npos);
    EXPECT_NE(t.find("75.00"), std::string::npos);
    EXPECT_NE(t.find("83.33"), std::string::npos);
    row.report.metrics = metrics_from({0, 0, 6, 4});
    EXPECT_NE(render_table(std::span(&row, 1), "Setting", false).find("n/a"), std::string::npos);
}

TEST(Report, NullsSerializeAsNull) {
    EvalReport r;
    r.metrics = metrics_from({0, 0, 6, 4});
    const auto j = report_to_json(r);
    EXPECT_TRUE(j["metrics"]["precision"].is_null());
    EXPECT_EQ(j["metrics"]["recall"], 0.0);
}
