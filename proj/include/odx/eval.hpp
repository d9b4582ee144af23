#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odx/llm.hpp"
#include "odx/metrics.hpp"
#include "odx/serialize.hpp"

namespace odx {

/// How predictions that failed (transport or parse errors) are scored.
enum class FailurePolicy { ScoreNegative, Exclude };

std::string_view to_string(FailurePolicy p);

struct SubgroupAccuracy {
    std::optional<double> exposed;      // ControlExposed instances predicted no-overdose
    std::optional<double> non_exposed;  // ControlNonExposed instances predicted no-overdose
    std::size_t n_exposed = 0;
    std::size_t n_non_exposed = 0;
};

struct EvalReport {
    ConfusionMatrix confusion;
    Metrics metrics;
    SubgroupAccuracy subgroups;
    std::size_t n_instances = 0;
    std::size_t n_errors = 0;
    FailurePolicy failure_policy = FailurePolicy::ScoreNegative;
};

/// Aligns predictions with gold instances by instance_id. Every instance
/// needs exactly one prediction and vice versa; otherwise ValidationError.
EvalReport compute_metrics(std::span<const PredictionOutcome> predictions, std::span<const PredictionInstance> gold,
                           FailurePolicy policy = FailurePolicy::ScoreNegative);

/// Accuracy of predicting no-overdose within each control subgroup; an empty
/// subgroup yields nullopt.
SubgroupAccuracy subgroup_accuracy(std::span<const PredictionOutcome> predictions,
                                   std::span<const PredictionInstance> gold,
                                   FailurePolicy policy = FailurePolicy::ScoreNegative);

/// Scores a batch of rendered prompts, keeping input order.
using Predictor = std::function<std::vector<PredictionOutcome>(std::span<const PromptDocument>)>;

Predictor make_llm_predictor(ChatBackend& backend, const LLMConfig& config);

struct RenderSettings {
    PromptFormat format = PromptFormat::DetailedDescriptive;
    int max_visits = 30;
    FieldMask mask;
    const CodeDictionary* dictionary = nullptr;
    const PromptTemplates* templates = nullptr;
    std::size_t threads = 1;
};

/// Renders every instance, in parallel when settings.threads > 1.
std::vector<PromptDocument> render_all(std::span<const PredictionInstance> instances, const RenderSettings& settings);

struct SweepRow {
    std::string setting;  // "5", "10", ... or a mask such as "dx,rx"
    EvalReport report;
    double mean_tokens = 0;
};

inline constexpr int kDefaultVisitLimits[] = {5, 10, 20, 30, 40};

/// One row per visit limit. Errors are rethrown naming the failing limit.
std::vector<SweepRow> run_visits_sweep(const Predictor& predictor, std::span<const PredictionInstance> instances,
                                       std::span<const int> visit_limits, const RenderSettings& settings,
                                       FailurePolicy policy = FailurePolicy::ScoreNegative);

/// One row per non-empty field mask, in all_nonempty_masks() order.
std::vector<SweepRow> run_field_ablation(const Predictor& predictor, std::span<const PredictionInstance> instances,
                                         const RenderSettings& settings,
                                         FailurePolicy policy = FailurePolicy::ScoreNegative);

struct CostModel {
    double input_price_per_1k = 0.0025;
    double output_price_per_1k = 0.01;
    int assumed_output_tokens = 5;

    void validate() const;
    static CostModel from_json(const nlohmann::json& j);
    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

/// Mean over documents of token_estimate/1000 * input price plus
/// assumed_output_tokens/1000 * output price. 0 for no documents.
double estimate_cost(std::span<const PromptDocument> documents, const CostModel& model);

/// "$0.0137".
std::string format_usd(double amount);

nlohmann::ordered_json metrics_to_json(const Metrics& m);
nlohmann::ordered_json report_to_json(const EvalReport& report);
nlohmann::ordered_json rows_to_json(std::span<const SweepRow> rows);

/// Plain-text table: first column `setting_header`, then Precision, Recall,
/// Specificity and F1-score as percentages with two decimals ("n/a" when
/// undefined), then mean tokens when `with_tokens` is set.
std::string render_table(std::span<const SweepRow> rows, const std::string& setting_header, bool with_tokens);

}  // namespace odx
