// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "odx/cli.hpp"
#include "odx/codes.hpp"
#include "odx/cohort.hpp"
#include "odx/ensemble.hpp"
#include "odx/eval.hpp"
#include "odx/features.hpp"
#include "odx/ingest.hpp"
#include "odx/llm.hpp"
#include "odx/serialize.hpp"
#include "odx/synthgen.hpp"
#include "odx/util.hpp"

#include "../support/oracles.hpp"

namespace fs = std::filesystem;
using namespace odx;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void run(int id, const char* name, const std::function<Outcome()>& body) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, " (%.1fs)", seconds_since(t0));
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << name << " -- " << o.detail << buf
              << std::endl;
    if (!o.pass) ++failures;
}

std::string f(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

std::size_t threads() { return default_parallelism(); }

// Generated split pushed through the claims tables and the cohort builder,
// together with the untruncated patients for oracle checks.
struct SplitData {
    std::vector<PatientRecord> patients;
    std::vector<PredictionInstance> instances;
    TaskSetReport report;
};

SplitData make_split(const GeneratorConfig& cfg, Split split) {
    const auto pop = generate_population(cfg, split, threads());
    auto ingested = parse_claims_tables(to_claims_tables(pop.patients));
    auto ts = build_task_set(ingested.patients, make_window(cfg.window_days), split);
    return {std::move(ingested.patients), std::move(ts.instances), ts.report};
}

const SplitData& default_test_split() {
    static const SplitData data = make_split(GeneratorConfig{}, Split::Test);
    return data;
}

double mean_tokens(const std::vector<PromptDocument>& docs) {
    double s = 0;
    for (const auto& d : docs) s += static_cast<double>(d.token_estimate);
    return s / static_cast<double>(docs.size());
}

std::vector<PromptDocument> render(const std::vector<PredictionInstance>& instances, PromptFormat format,
                                   int max_visits) {
    static const CodeDictionary dict = CodePools::defaults().dictionary();
    static const PromptTemplates templates = PromptTemplates::defaults();
    return render_all(instances, {format, max_visits, FieldMask{}, &dict, &templates, threads()});
}

// ---- criteria ---------------------------------------------------------------

Outcome code_rules() {
    const auto t0 = Clock::now();
    const auto corpus = oracle::code_corpus();
    std::size_t bad = 0;
    std::string first;
    for (const auto& c : corpus) {
        if (is_overdose_diagnosis(c.item) != c.overdose || is_exposure_diagnosis(c.item) != c.exposure) {
            if (bad++ == 0) first = std::string(to_string(c.item.system)) + " " + c.item.code;
        }
    }
    const double secs = seconds_since(t0);
    return {bad == 0 && secs < 5.0, std::to_string(corpus.size()) + " codes, " + std::to_string(bad) +
                                        " disagreements" + (first.empty() ? "" : " (first " + first + ")") +
                                        ", " + f("%.3fs", secs)};
}

Outcome leakage() {
    const auto t0 = Clock::now();
    const GeneratorConfig cfg;
    const auto data = make_split(cfg, Split::Test);
    const auto codes = oracle::overdose_codes(cfg);
    std::map<std::string, const PatientRecord*> full;
    for (const auto& p : data.patients) full[p.enrol_id] = &p;

    std::size_t late_events = 0, wrong_labels = 0, cases = 0;
    for (const auto& inst : data.instances) {
        for (const auto& e : inst.history.encounters) late_events += e.date > inst.cutoff_date ? 1 : 0;
        for (const auto& r : inst.history.prescriptions) late_events += r.fill_date > inst.cutoff_date ? 1 : 0;
        const PatientRecord& p = *full.at(inst.enrol_id);
        const Date horizon = add_days(inst.cutoff_date, inst.window.days);
        if (inst.label == Label::Overdose) {
            ++cases;
            // The overdose sits inside the window and nothing earlier is one.
            const bool ok = oracle::has_overdose_between(p, codes, inst.cutoff_date, horizon) &&
                            !oracle::has_overdose_between(p, codes, Date::min(), inst.cutoff_date);
            wrong_labels += ok ? 0 : 1;
        } else {
            wrong_labels += oracle::has_any_overdose(p, codes) ? 1 : 0;
        }
    }
    const double secs = seconds_since(t0);
    const bool ok = data.instances.size() == 900 && late_events == 0 && wrong_labels == 0 && secs < 10.0;
    return {ok, std::to_string(data.instances.size()) + " instances, " + std::to_string(cases) + " cases, " +
                    std::to_string(late_events) + " events after cutoff, " + std::to_string(wrong_labels) +
                    " labels contradicting the untruncated record, " + f("%.2fs", secs)};
}

Outcome composition() {
    std::ostringstream detail;
    bool ok = true;
    const GeneratorConfig cfg;
    for (auto split : {Split::Train, Split::Valid, Split::Test}) {
        const auto data = split == Split::Test ? default_test_split() : make_split(cfg, split);
        std::size_t n_case = 0, n_control = 0, n_exposed = 0;
        for (const auto& inst : data.instances) {
            if (inst.cohort == CohortLabel::Case) {
                ++n_case;
            } else {
                ++n_control;
                n_exposed += inst.cohort == CohortLabel::ControlExposed ? 1 : 0;
            }
        }
        ok = ok && n_case == 300 && n_control == 600 && n_exposed * 2 == n_control;
        detail << (detail.tellp() > 0 ? "; " : "") << to_string(split) << " " << n_case << "/" << n_control << " ("
               << n_exposed << " exposed)";
    }
    return {ok, detail.str()};
}

std::vector<PredictionInstance> instances_from(const std::vector<bool>& gold) {
    std::vector<PredictionInstance> out(gold.size());
    for (std::size_t i = 0; i < gold.size(); ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "P%05zu", i);
        out[i].enrol_id = id;
        out[i].label = gold[i] ? Label::Overdose : Label::NoOverdose;
        out[i].cohort = gold[i] ? CohortLabel::Case : CohortLabel::ControlNonExposed;
    }
    return out;
}

std::vector<PredictionOutcome> outcomes_from(const std::vector<PredictionInstance>& inst, const std::vector<bool>& pred) {
    std::vector<PredictionOutcome> out;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        Prediction p;
        p.instance_id = inst[i].enrol_id;
        p.label = pred[i] ? Label::Overdose : Label::NoOverdose;
        out.push_back({p.instance_id, p, "", ""});
    }
    // Alignment is by id, so order must not matter.
    std::reverse(out.begin(), out.end());
    return out;
}

bool close(const std::optional<double>& a, const std::optional<double>& b) {
    if (a.has_value() != b.has_value()) return false;
    return !a || std::fabs(*a - *b) <= 1e-12;
}

Outcome metrics() {
    struct Fixture {
        std::size_t tp, fp, fn, tn;
        std::optional<double> p, r, spec, f1;
    };
    // Worked by hand.
    const Fixture fixtures[] = {
        {3, 1, 1, 5, 0.75, 0.75, 5.0 / 6.0, 0.75},
        {2, 6, 2, 10, 0.25, 0.5, 0.625, 1.0 / 3.0},
        {0, 0, 4, 6, std::nullopt, 0.0, 1.0, std::nullopt},
        {10, 0, 0, 0, 1.0, 1.0, std::nullopt, 1.0},
        {0, 5, 5, 0, 0.0, 0.0, 0.0, std::nullopt},
    };
    std::size_t fixture_fail = 0;
    for (const auto& fx : fixtures) {
        std::vector<bool> pred, gold;
        auto push = [&](std::size_t n, bool p, bool g) {
            for (std::size_t i = 0; i < n; ++i) {
                pred.push_back(p);
                gold.push_back(g);
            }
        };
        push(fx.tp, true, true);
        push(fx.fp, true, false);
        push(fx.fn, false, true);
        push(fx.tn, false, false);
        const auto inst = instances_from(gold);
        const auto r = compute_metrics(outcomes_from(inst, pred), inst);
        const bool ok = r.confusion == ConfusionMatrix{fx.tp, fx.fp, fx.tn, fx.fn} && close(r.metrics.precision, fx.p) &&
                        close(r.metrics.recall, fx.r) && close(r.metrics.specificity, fx.spec) &&
                        close(r.metrics.f1, fx.f1);
        fixture_fail += ok ? 0 : 1;
    }

    std::mt19937_64 rng(2024);
    std::size_t random_fail = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 60;
        const double base = static_cast<double>(rng() % 101) / 100.0;
        std::vector<bool> pred(n), gold(n);
        for (std::size_t i = 0; i < n; ++i) {
            gold[i] = static_cast<double>(rng() % 1000) / 1000.0 < base;
            pred[i] = rng() % 2 == 0;
        }
        const auto inst = instances_from(gold);
        const auto r = compute_metrics(outcomes_from(inst, pred), inst);
        const auto b = oracle::brute_metrics(pred, gold);
        const bool ok = long(r.confusion.tp) == b.tp && long(r.confusion.fp) == b.fp && long(r.confusion.tn) == b.tn &&
                        long(r.confusion.fn) == b.fn && close(r.metrics.precision, b.precision) &&
                        close(r.metrics.recall, b.recall) && close(r.metrics.specificity, b.specificity) &&
                        close(r.metrics.f1, b.f1);
        random_fail += ok ? 0 : 1;
    }
    return {fixture_fail == 0 && random_fail == 0, "5 fixtures (" + std::to_string(fixture_fail) + " wrong), 200 random pairings (" +
                                                       std::to_string(random_fail) + " disagreeing with the counting oracle)"};
}

Dataset dataset(const std::vector<PredictionInstance>& instances, const Vocabulary& vocab) {
    Dataset d;
    d.dimension = vocab.size();
    for (const auto& inst : instances) {
        d.x.push_back(vectorize(inst, vocab, 30));
        d.y.push_back(inst.label);
    }
    return d;
}

std::map<EnsembleKind, double> baseline_f1(double signal) {
    GeneratorConfig cfg;
    cfg.signal_strength = signal;
    const auto train = make_split(cfg, Split::Train).instances;
    const auto valid = make_split(cfg, Split::Valid).instances;
    const auto test = make_split(cfg, Split::Test).instances;
    const auto vocab = build_vocabulary(train);
    const auto dtrain = dataset(train, vocab), dvalid = dataset(valid, vocab), dtest = dataset(test, vocab);
    std::map<EnsembleKind, double> out;
    for (auto kind : {EnsembleKind::RandomForest, EnsembleKind::GradientBoosted}) {
        const auto model = train_ensemble(kind, dtrain, HyperGrid::default_for(kind), dvalid, 42, threads());
        std::vector<PredictionOutcome> outcomes;
        for (std::size_t i = 0; i < test.size(); ++i) {
            auto p = predict_ensemble(model, dtest.x[i], test[i].enrol_id);
            outcomes.push_back({test[i].enrol_id, p, "", ""});
        }
        const auto report = compute_metrics(outcomes, test);
        out[kind] = report.metrics.f1.value_or(0.0);
    }
    return out;
}

Outcome learnability() {
    const auto t0 = Clock::now();
    const auto strong = baseline_f1(0.8);
    const auto none = baseline_f1(0.0);
    const double secs = seconds_since(t0);
    bool ok = secs < 120.0;
    std::ostringstream d;
    for (auto kind : {EnsembleKind::RandomForest, EnsembleKind::GradientBoosted}) {
        ok = ok && strong.at(kind) >= 0.75 && none.at(kind) >= 0.30 && none.at(kind) <= 0.55;
        d << to_string(kind) << " F1 " << f("%.3f", strong.at(kind)) << " at signal 0.8, " << f("%.3f", none.at(kind))
          << " at signal 0; ";
    }
    d << "train+eval " << f("%.1fs", secs);
    return {ok, d.str()};
}

Outcome format_tokens() {
    const auto& test = default_test_split().instances;
    std::vector<double> means;
    std::ostringstream d;
    for (auto format : kAllFormats) {
        means.push_back(mean_tokens(render(test, format, 30)));
        d << to_string(format) << " " << f("%.1f", means.back()) << ", ";
    }
    const double reduction = 1.0 - means[1] / means[0];
    const bool ok = means[0] > means[1] && means[1] > means[2] && means[2] > means[3] && reduction >= 0.15;
    d << "detailed-code reduction " << f("%.1f%%", reduction * 100);
    return {ok, d.str()};
}

Outcome token_growth() {
    const auto& test = default_test_split().instances;
    std::vector<double> means;
    std::ostringstream d;
    bool increasing = true;
    for (int limit : kDefaultVisitLimits) {
        means.push_back(mean_tokens(render(test, PromptFormat::DetailedDescriptive, limit)));
        if (means.size() > 1) increasing = increasing && means.back() > means[means.size() - 2];
        d << limit << ": " << f("%.1f", means.back()) << ", ";
    }
    const double ratio = means[4] / means[2];
    d << "40/20 ratio " << f("%.2f", ratio);
    return {increasing && ratio >= 1.8, d.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cli(const std::vector<std::string>& args, std::string* err_out = nullptr) {
    std::ostringstream out, err;
    const int rc = run_cli(args, out, err);
    if (err_out) *err_out += err.str();
    return rc;
}

Outcome end_to_end(const fs::path& scratch) {
    const auto t0 = Clock::now();
    std::vector<std::string> sums;
    std::string errors;
    bool ok = true;
    std::size_t ablation_rows = 0, sweep_rows = 0;
    for (int run = 0; run < 2; ++run) {
        const auto dir = scratch / ("run" + std::to_string(run));
        fs::remove_all(dir);
        const auto p = [&](const char* name) { return (dir / name).string(); };
        const std::vector<std::vector<std::string>> steps{
            {"synth", "--out", p("data"), "--splits", "test"},
            {"cohort", "--data", p("data/test"), "--out", p("test.jsonl")},
            {"render", "--instances", p("test.jsonl"), "--out", p("prompts.jsonl")},
            {"predict", "--prompts", p("prompts.jsonl"), "--backend", "mock", "--mock-policy", "exposure", "--out",
             p("predictions.jsonl")},
            {"evaluate", "--instances", p("test.jsonl"), "--predictions", p("predictions.jsonl"), "--out",
             p("report.json")},
            {"ablate", "--instances", p("test.jsonl"), "--out", p("ablation.json")},
            {"sweep", "--instances", p("test.jsonl"), "--out", p("sweep.json")},
        };
        for (const auto& step : steps) {
            if (cli(step, &errors) != 0) {
                ok = false;
                errors += "[" + step[0] + " failed] ";
            }
        }
        if (!ok) break;
        char sum[17];
        std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(fnv1a(slurp(dir / "report.json"))));
        sums.push_back(sum);
        ablation_rows = nlohmann::json::parse(slurp(dir / "ablation.json")).at("rows").size();
        sweep_rows = nlohmann::json::parse(slurp(dir / "sweep.json")).at("rows").size();
        ok = ok && ablation_rows == 7 && sweep_rows == 5;
    }
    const double secs = seconds_since(t0);
    ok = ok && sums.size() == 2 && sums[0] == sums[1] && secs < 180.0;
    std::string d = sums.size() == 2 ? "report.json checksums " + sums[0] + " / " + sums[1] : "pipeline failed: " + errors;
    d += ", ablation rows " + std::to_string(ablation_rows) + ", sweep rows " + std::to_string(sweep_rows) + ", " +
         f("%.1fs", secs);
    return {ok, d};
}

Outcome finetune_export(const fs::path& scratch) {
    const auto train = make_split(GeneratorConfig{}, Split::Train).instances;
    const auto path = scratch / "finetune.jsonl";
    const auto n = export_finetune_dataset(train, PromptFormat::DetailedDescriptive, 30, FieldMask{},
                                           CodePools::defaults().dictionary(), PromptTemplates::defaults(), path);
    std::map<std::string, Label> gold;
    for (const auto& inst : train) gold[inst.enrol_id] = inst.label;

    std::ifstream in(path);
    std::string line;
    std::size_t lines = 0, bad = 0, i = 0;
    while (std::getline(in, line)) {
        ++lines;
        try {
            const auto j = nlohmann::json::parse(line);
            const auto& msgs = j.at("messages");
            const bool shape = msgs.size() == 3 && msgs[0].at("role") == "system" && msgs[1].at("role") == "user" &&
                               msgs[2].at("role") == "assistant";
            const auto answer = nlohmann::json::parse(msgs[2].at("content").get<std::string>());
            const std::string want = train[i].label == Label::Overdose ? "yes" : "no";
            const bool ok = shape && answer.size() == 1 && answer.at("overdose_risk") == want &&
                            !msgs[1].at("content").get<std::string>().empty();
            bad += ok ? 0 : 1;
        } catch (const std::exception&) {
            ++bad;
        }
        ++i;
    }
    return {train.size() == 900 && n == 900 && lines == 900 && bad == 0,
            std::to_string(train.size()) + " train instances, " + std::to_string(lines) + " lines, " +
                std::to_string(bad) + " malformed or mislabeled"};
}

Outcome subgroups() {
    const auto& test = default_test_split().instances;
    const auto docs = render(test, PromptFormat::DetailedDescriptive, 30);
    LLMConfig llm;
    llm.max_concurrent = 8;
    auto accuracy = [&](MockChatBackend::Policy policy) {
        MockChatBackend::Options opts;
        opts.policy = policy;
        MockChatBackend backend(opts);
        return subgroup_accuracy(llm_predict_batch(backend, llm, docs), test);
    };
    const auto biased = accuracy(MockChatBackend::Policy::Exposure);
    const auto unbiased = accuracy(MockChatBackend::Policy::ConstantNo);
    const bool ok = biased.exposed && biased.non_exposed && *biased.exposed < *biased.non_exposed && unbiased.exposed &&
                    unbiased.non_exposed && *unbiased.exposed == *unbiased.non_exposed;
    auto pct = [](const std::optional<double>& v) { return v ? f("%.2f", *v * 100) : std::string("n/a"); };
    return {ok, "exposure-biased mock: exposed " + pct(biased.exposed) + " vs non-exposed " + pct(biased.non_exposed) +
                    "; unbiased mock: " + pct(unbiased.exposed) + " vs " + pct(unbiased.non_exposed)};
}

}  // namespace

int main() {
    const auto scratch = fs::temp_directory_path() / ("odx_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(scratch);

    run(1, "code-rule oracle equivalence", code_rules);
    run(2, "leakage freedom", leakage);
    run(3, "composition", composition);
    run(4, "metric correctness", metrics);
    run(5, "baseline learnability", learnability);
    run(6, "format token ordering", format_tokens);
    run(7, "token growth with visit limit", token_growth);
    run(8, "end-to-end mock run", [&] { return end_to_end(scratch); });
    run(9, "fine-tune export", [&] { return finetune_export(scratch); });
    run(10, "subgroup accuracy", subgroups);

    std::error_code ec;
    fs::remove_all(scratch, ec);
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
