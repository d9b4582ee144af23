#include "odx/eval.hpp"

#include <cstdio>
#include <map>
#include <sstream>

#include "odx/error.hpp"
#include "odx/util.hpp"

namespace odx {

std::string_view to_string(FailurePolicy p) {
    return p == FailurePolicy::ScoreNegative ? "score-negative" : "exclude";
}

namespace {

// Pairs each gold instance with its prediction (nullptr for a failure).
std::vector<const Prediction*> align(std::span<const PredictionOutcome> predictions,
                                     std::span<const PredictionInstance> gold) {
    if (predictions.size() != gold.size()) {
        throw ValidationError("prediction count " + std::to_string(predictions.size()) +
                              " does not match instance count " + std::to_string(gold.size()));
    }
    std::map<std::string, const PredictionOutcome*, std::less<>> by_id;
    for (const auto& p : predictions) {
        if (!by_id.emplace(p.instance_id, &p).second) throw ValidationError("duplicate prediction for " + p.instance_id);
    }
    std::vector<const Prediction*> out;
    out.reserve(gold.size());
    for (const auto& g : gold) {
        auto it = by_id.find(g.instance_id());
        if (it == by_id.end()) throw ValidationError("no prediction for instance " + g.instance_id());
        out.push_back(it->second->prediction ? &*it->second->prediction : nullptr);
    }
    return out;
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

SubgroupAccuracy subgroups_of(const std::vector<const Prediction*>& aligned, std::span<const PredictionInstance> gold,
                              FailurePolicy policy) {
    std::size_t ok_e = 0, n_e = 0, ok_n = 0, n_n = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i].cohort == CohortLabel::Case) continue;
        const Prediction* p = aligned[i];
        if (!p && policy == FailurePolicy::Exclude) continue;
        const bool correct = !p || p->label == Label::NoOverdose;
        if (gold[i].cohort == CohortLabel::ControlExposed) {
            ++n_e;
            ok_e += correct ? 1 : 0;
        } else {
            ++n_n;
            ok_n += correct ? 1 : 0;
        }
    }
    return {ratio(ok_e, n_e), ratio(ok_n, n_n), n_e, n_n};
}

}  // namespace

EvalReport compute_metrics(std::span<const PredictionOutcome> predictions, std::span<const PredictionInstance> gold,
                           FailurePolicy policy) {
    const auto aligned = align(predictions, gold);
    EvalReport r;
    r.failure_policy = policy;
    r.n_instances = gold.size();
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const Prediction* p = aligned[i];
        if (!p) {
            ++r.n_errors;
            if (policy == FailurePolicy::Exclude) continue;
        }
        r.confusion.add(p ? p->label : Label::NoOverdose, gold[i].label);
    }
    r.metrics = metrics_from(r.confusion);
    r.subgroups = subgroups_of(aligned, gold, policy);
    return r;
}

SubgroupAccuracy subgroup_accuracy(std::span<const PredictionOutcome> predictions,
                                   std::span<const PredictionInstance> gold, FailurePolicy policy) {
    return subgroups_of(align(predictions, gold), gold, policy);
}

Predictor make_llm_predictor(ChatBackend& backend, const LLMConfig& config) {
    return [&backend, config](std::span<const PromptDocument> docs) { return llm_predict_batch(backend, config, docs); };
}

std::vector<PromptDocument> render_all(std::span<const PredictionInstance> instances, const RenderSettings& s) {
    if (!s.dictionary) throw ValidationError("render settings need a code dictionary");
    const auto defaults = PromptTemplates::defaults();
    const PromptTemplates& templates = s.templates ? *s.templates : defaults;
    std::vector<PromptDocument> docs(instances.size());
    parallel_for(instances.size(), s.threads, [&](std::size_t i) {
        docs[i] = render_prompt(instances[i], s.format, s.max_visits, s.mask, *s.dictionary, templates);
    });
    return docs;
}

namespace {

double mean_tokens(const std::vector<PromptDocument>& docs) {
    if (docs.empty()) return 0;
    double sum = 0;
    for (const auto& d : docs) sum += static_cast<double>(d.token_estimate);
    return sum / static_cast<double>(docs.size());
}

SweepRow run_cell(const Predictor& predictor, std::span<const PredictionInstance> instances,
                  const RenderSettings& settings, FailurePolicy policy, std::string label, const char* what) {
    try {
        const auto docs = render_all(instances, settings);
        const auto outcomes = predictor(docs);
        return {label, compute_metrics(outcomes, instances, policy), mean_tokens(docs)};
    } catch (const ValidationError& e) {
        throw ValidationError(std::string(what) + " " + label + ": " + e.what());
    } catch (const Error& e) {
        throw Error(std::string(what) + " " + label + ": " + e.what());
    }
}

}  // namespace

std::vector<SweepRow> run_visits_sweep(const Predictor& predictor, std::span<const PredictionInstance> instances,
                                       std::span<const int> visit_limits, const RenderSettings& settings,
                                       FailurePolicy policy) {
    std::vector<SweepRow> rows;
    for (int limit : visit_limits) {
        auto s = settings;
        s.max_visits = limit;
        rows.push_back(run_cell(predictor, instances, s, policy, std::to_string(limit), "visit limit"));
    }
    return rows;
}

std::vector<SweepRow> run_field_ablation(const Predictor& predictor, std::span<const PredictionInstance> instances,
                                         const RenderSettings& settings, FailurePolicy policy) {
    std::vector<SweepRow> rows;
    for (const auto& mask : all_nonempty_masks()) {
        auto s = settings;
        s.mask = mask;
        rows.push_back(run_cell(predictor, instances, s, policy, to_string(mask), "field mask"));
    }
    return rows;
}

// ---- cost ----------------------------------------------------------------------

void CostModel::validate() const {
    if (!(input_price_per_1k >= 0) || !(output_price_per_1k >= 0)) {
        throw ValidationError("cost model: prices must be >= 0");
    }
    if (assumed_output_tokens < 0) throw ValidationError("cost model: assumed_output_tokens must be >= 0");
}

CostModel CostModel::from_json(const nlohmann::json& j) {
    CostModel m;
    for (const auto& [key, v] : j.items()) {
        if (key == "input_price_per_1k") {
            m.input_price_per_1k = v.get<double>();
        } else if (key == "output_price_per_1k") {
            m.output_price_per_1k = v.get<double>();
        } else if (key == "assumed_output_tokens") {
            m.assumed_output_tokens = v.get<int>();
        } else {
            throw ValidationError("cost model: unknown key '" + key + "'");
        }
    }
    m.validate();
    return m;
}

nlohmann::ordered_json CostModel::to_json() const {
    return {{"input_price_per_1k", input_price_per_1k},
            {"output_price_per_1k", output_price_per_1k},
            {"assumed_output_tokens", assumed_output_tokens}};
}

double estimate_cost(std::span<const PromptDocument> documents, const CostModel& model) {
    if (documents.empty()) return 0;
    double sum = 0;
    for (const auto& d : documents) sum += static_cast<double>(d.token_estimate) / 1000.0 * model.input_price_per_1k;
    const double output = static_cast<double>(model.assumed_output_tokens) / 1000.0 * model.output_price_per_1k;
    return sum / static_cast<double>(documents.size()) + output;
}

std::string format_usd(double amount) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "$%.4f", amount);
    return buf;
}

// ---- reporting -----------------------------------------------------------------

namespace {

nlohmann::ordered_json opt(const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json();
}

std::string pct(const std::optional<double>& v) {
    if (!v) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
    return buf;
}

}  // namespace

nlohmann::ordered_json metrics_to_json(const Metrics& m) {
    return {{"precision", opt(m.precision)},
            {"recall", opt(m.recall)},
            {"specificity", opt(m.specificity)},
            {"f1", opt(m.f1)}};
}

nlohmann::ordered_json report_to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["n_instances"] = r.n_instances;
    j["n_errors"] = r.n_errors;
    j["failure_policy"] = to_string(r.failure_policy);
    j["confusion"] = {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}};
    j["metrics"] = metrics_to_json(r.metrics);
    j["subgroup_accuracy"] = {{"control-exposed", opt(r.subgroups.exposed)},
                              {"control-nonexposed", opt(r.subgroups.non_exposed)},
                              {"n_control_exposed", r.subgroups.n_exposed},
                              {"n_control_nonexposed", r.subgroups.n_non_exposed}};
    return j;
}

nlohmann::ordered_json rows_to_json(std::span<const SweepRow> rows) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& row : rows) {
        nlohmann::ordered_json j;
        j["setting"] = row.setting;
        j["mean_tokens"] = row.mean_tokens;
        j["report"] = report_to_json(row.report);
        arr.push_back(std::move(j));
    }
    return arr;
}

std::string render_table(std::span<const SweepRow> rows, const std::string& setting_header, bool with_tokens) {
    std::size_t width = setting_header.size();
    for (const auto& r : rows) width = std::max(width, r.setting.size());
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s  %9s  %9s  %11s  %8s", static_cast<int>(width), setting_header.c_str(),
                  "Precision", "Recall", "Specificity", "F1-score");
    out << buf;
    if (with_tokens) out << "  " << "   Tokens";
    out << '\n';
    for (const auto& r : rows) {
        const auto& m = r.report.metrics;
        std::snprintf(buf, sizeof buf, "%-*s  %9s  %9s  %11s  %8s", static_cast<int>(width), r.setting.c_str(),
                      pct(m.precision).c_str(), pct(m.recall).c_str(), pct(m.specificity).c_str(),
                      pct(m.f1).c_str());
        out << buf;
        if (with_tokens) {
            std::snprintf(buf, sizeof buf, "  %9.2f", r.mean_tokens);
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace odx
