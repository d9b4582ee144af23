#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "odx/cohort.hpp"
#include "odx/features.hpp"
#include "odx/field_mask.hpp"

namespace odx {

enum class PromptFormat { DetailedDescriptive, DetailedCode, SummarizedDescriptive, SummarizedCode };

inline constexpr PromptFormat kAllFormats[] = {PromptFormat::DetailedDescriptive, PromptFormat::DetailedCode,
                                               PromptFormat::SummarizedDescriptive, PromptFormat::SummarizedCode};

/// "detailed-descriptive", "detailed-code", "summarized-descriptive", "summarized-code".
std::string_view to_string(PromptFormat f);
std::optional<PromptFormat> prompt_format_from_string(std::string_view s);
bool is_detailed(PromptFormat f);
bool is_descriptive(PromptFormat f);

/// Code descriptions and readable labels for raw field names. Lookups never
/// fail: a missing code echoes the code, a missing field echoes the raw name.
class CodeDictionary {
public:
    /// A dictionary holding only the built-in field labels.
    static CodeDictionary with_default_labels();

    void add_code(CodeSystem system, std::string code, std::string description);
    void set_field_label(std::string field, std::string label);

    [[nodiscard]] std::string describe(CodeSystem system, const std::string& code) const;
    [[nodiscard]] std::string field_label(const std::string& field) const;
    [[nodiscard]] std::size_t code_count() const { return codes_.size(); }

    [[nodiscard]] nlohmann::ordered_json to_json() const;
    static CodeDictionary from_json(const nlohmann::json& j);
    static CodeDictionary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

private:
    std::map<std::pair<CodeSystem, std::string>, std::string> codes_;
    std::map<std::string, std::string, std::less<>> fields_;
};

/// Instruction text per format with a {window_days} placeholder. Built-in
/// defaults match the files shipped in templates/; a directory of
/// <format>.txt files overrides them.
class PromptTemplates {
public:
    static PromptTemplates defaults();
    static PromptTemplates load(const std::filesystem::path& dir);

    [[nodiscard]] std::string instruction(PromptFormat format, PredictionWindow window) const;
    [[nodiscard]] const std::string& raw(PromptFormat format) const;

    static constexpr std::string_view kVersion = "v1";

private:
    std::map<PromptFormat, std::string> text_;
};

struct PromptDocument {
    std::string instance_id;
    PromptFormat format = PromptFormat::DetailedDescriptive;
    int window_days = 7;
    std::string instruction;
    std::string body;
    long token_estimate = 0;  // estimate_tokens(instruction + body)
    int visits_included = 0;

    /// instruction, blank line, body.
    [[nodiscard]] std::string prompt_text() const { return instruction + "\n\n" + body; }
};

/// Ordered feature-key counts over the last `max_visits` visits and the
/// fills inside that span (the aggregated view used by summarized prompts).
std::map<FeatureKey, long> summarize_history(const PredictionInstance& instance, int max_visits,
                                             const FieldMask& mask);

/// Renders one instance as a prompt. Detailed formats emit the most recent
/// `max_visits` encounters in chronological order, then the fills in that
/// span; summarized formats emit demographics and the summarize_history
/// counts. Throws ValidationError for an all-disabled mask, max_visits < 1,
/// or an empty history.
PromptDocument render_prompt(const PredictionInstance& instance, PromptFormat format, int max_visits,
                             const FieldMask& mask, const CodeDictionary& dict,
                             const PromptTemplates& templates = PromptTemplates::defaults());

// prompts.jsonl
nlohmann::ordered_json prompt_to_json(const PromptDocument& doc);
PromptDocument prompt_from_json(const nlohmann::json& j);
void write_prompts(const std::filesystem::path& path, std::span<const PromptDocument> docs);
std::vector<PromptDocument> read_prompts(const std::filesystem::path& path);

}  // namespace odx
