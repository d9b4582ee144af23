#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odx/ensemble.hpp"
#include "odx/serialize.hpp"

namespace odx {

struct LLMConfig {
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "gpt-4o";
    double temperature = 0.5;
    int max_tokens = 16;
    int timeout_seconds = 60;
    int max_retries = 3;
    int max_concurrent = 4;
    int backoff_initial_ms = 500;
    int backoff_max_ms = 8000;
    std::string api_key_env = "ODX_API_KEY";

    /// Throws ValidationError.
    void validate() const;
    static LLMConfig from_json(const nlohmann::json& j);
    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

struct ChatRequest {
    std::string model;
    std::string system;
    std::string user;
    double temperature = 0.5;
    int max_tokens = 16;
};

/// Chat-completion transport. complete() returns the assistant message text
/// or throws TransportError (transient() tells whether a retry may help).
class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual std::string complete(const ChatRequest& request, const std::string& instance_id) = 0;
};

/// OpenAI-compatible endpoint over HTTP(S). The bearer token is read from the
/// environment variable named in the config, if set.
class HttpChatBackend : public ChatBackend {
public:
    explicit HttpChatBackend(LLMConfig config);
    std::string complete(const ChatRequest& request, const std::string& instance_id) override;

    /// Request body sent for `request`.
    static nlohmann::ordered_json request_body(const ChatRequest& request);
    /// choices[0].message.content of a response body; throws TransportError.
    static std::string extract_content(const std::string& body, const std::string& instance_id);

private:
    LLMConfig config_;
    std::string scheme_host_port_;
    std::string path_;
};

/// Deterministic in-process endpoint. Answers {"overdose_risk": "yes"} when
/// the user message contains one of the policy markers (or always/never for the
/// constant policies). Safe under concurrent calls.
class MockChatBackend : public ChatBackend {
public:
    enum class Policy { Exposure, DxMarker, ConstantNo, ConstantYes };

    /// Phrases and code stems that trigger a "yes". A code stem matches at
    /// the start of a code token followed by a digit ("F11" matches F1120).
    struct Markers {
        std::vector<std::string> phrases;
        std::vector<std::string> code_stems;
        [[nodiscard]] bool found_in(const std::string& text) const;
    };

    struct Options {
        Policy policy = Policy::Exposure;
        std::chrono::milliseconds latency{0};
        int transient_failures = 0;   // per instance, before the first success
        bool permanent_failure = false;
        std::string reply_override;   // returned verbatim when non-empty
    };

    explicit MockChatBackend(Options options);
    std::string complete(const ChatRequest& request, const std::string& instance_id) override;

    [[nodiscard]] int max_in_flight() const { return max_in_flight_.load(); }
    [[nodiscard]] long calls() const { return calls_.load(); }

    /// Opioid/stimulant use-disorder diagnoses and opioid or stimulant drug
    /// classes, in coded and descriptive form.
    static Markers exposure_markers();
    /// Anxiety, depression, trauma and chronic-pain diagnoses only.
    static Markers dx_markers();

private:
    Options options_;
    Markers markers_;
    std::atomic<int> in_flight_{0};
    std::atomic<int> max_in_flight_{0};
    std::atomic<long> calls_{0};
    std::mutex mutex_;
    std::map<std::string, int> failures_seen_;
};

std::optional<MockChatBackend::Policy> mock_policy_from_string(std::string_view s);

/// Strict answer parser. Accepts, case-insensitively, a JSON-style
/// "overdose_risk" member valued yes/no, or a leading yes/no token. Text
/// mentioning both yes and no, or neither form, throws ParseError.
Label parse_llm_response(const std::string& text);

/// One request (system = instruction, user = body), retried with exponential
/// backoff on transient transport errors. Throws TransportError after the
/// retries are exhausted and ParseError for an unusable answer.
Prediction llm_predict(ChatBackend& backend, const LLMConfig& config, const PromptDocument& document);

struct PredictionOutcome {
    std::string instance_id;
    std::optional<Prediction> prediction;
    std::string error_kind;  // "transport" or "parse" when prediction is empty
    std::string error;
};

/// Runs llm_predict over `documents` with at most config.max_concurrent
/// requests in flight. Results keep input order; failures are recorded per
/// document.
std::vector<PredictionOutcome> llm_predict_batch(ChatBackend& backend, const LLMConfig& config,
                                                 std::span<const PromptDocument> documents);

// predictions.jsonl
nlohmann::ordered_json outcome_to_json(const PredictionOutcome& outcome);
PredictionOutcome outcome_from_json(const nlohmann::json& j);
void write_predictions(const std::filesystem::path& path, std::span<const PredictionOutcome> outcomes);
std::vector<PredictionOutcome> read_predictions(const std::filesystem::path& path);

/// The gold assistant message for a label.
std::string gold_answer(Label label);

/// One chat record per instance:
/// {"messages": [system=instruction, user=body, assistant=gold answer]}.
/// Returns the number of lines written.
std::size_t export_finetune_dataset(std::span<const PredictionInstance> instances, PromptFormat format,
                                    int max_visits, const FieldMask& mask, const CodeDictionary& dict,
                                    const PromptTemplates& templates, const std::filesystem::path& out_path);

}  // namespace odx
