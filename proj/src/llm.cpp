#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "odx/llm.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <thread>

#include "odx/error.hpp"

namespace odx {

// ---- config ------------------------------------------------------------------

void LLMConfig::validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("llm config: " + m); };
    if (endpoint.empty()) fail("endpoint is empty");
    if (model.empty()) fail("model is empty");
    if (!(temperature >= 0)) fail("temperature must be >= 0");
    if (max_tokens < 1) fail("max_tokens must be >= 1");
    if (timeout_seconds < 1) fail("timeout_seconds must be >= 1");
    if (max_retries < 0) fail("max_retries must be >= 0");
    if (max_concurrent < 1) fail("max_concurrent must be >= 1");
    if (backoff_initial_ms < 0 || backoff_max_ms < backoff_initial_ms) fail("invalid backoff bounds");
}

LLMConfig LLMConfig::from_json(const nlohmann::json& j) {
    LLMConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "endpoint") {
            c.endpoint = v.get<std::string>();
        } else if (key == "model") {
            c.model = v.get<std::string>();
        } else if (key == "temperature") {
            c.temperature = v.get<double>();
        } else if (key == "max_tokens") {
            c.max_tokens = v.get<int>();
        } else if (key == "timeout_seconds") {
            c.timeout_seconds = v.get<int>();
        } else if (key == "max_retries") {
            c.max_retries = v.get<int>();
        } else if (key == "max_concurrent") {
            c.max_concurrent = v.get<int>();
        } else if (key == "backoff_initial_ms") {
            c.backoff_initial_ms = v.get<int>();
        } else if (key == "backoff_max_ms") {
            c.backoff_max_ms = v.get<int>();
        } else if (key == "api_key_env") {
            c.api_key_env = v.get<std::string>();
        } else {
            throw ValidationError("llm config: unknown key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

nlohmann::ordered_json LLMConfig::to_json() const {
    return {{"endpoint", endpoint},
            {"model", model},
            {"temperature", temperature},
            {"max_tokens", max_tokens},
            {"timeout_seconds", timeout_seconds},
            {"max_retries", max_retries},
            {"max_concurrent", max_concurrent},
            {"backoff_initial_ms", backoff_initial_ms},
            {"backoff_max_ms", backoff_max_ms},
            {"api_key_env", api_key_env}};
}

// ---- HTTP backend ----------------------------------------------------------------

HttpChatBackend::HttpChatBackend(LLMConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto scheme_end = config_.endpoint.find("://");
    if (scheme_end == std::string::npos) throw ValidationError("endpoint must start with http:// or https://");
    const auto scheme = config_.endpoint.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw ValidationError("unsupported endpoint scheme " + scheme);
    const auto path_start = config_.endpoint.find('/', scheme_end + 3);
    scheme_host_port_ = config_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);
}

nlohmann::ordered_json HttpChatBackend::request_body(const ChatRequest& r) {
    nlohmann::ordered_json j;
    j["model"] = r.model;
    j["messages"] = nlohmann::ordered_json::array({
        {{"role", "system"}, {"content", r.system}},
        {{"role", "user"}, {"content", r.user}},
    });
    j["temperature"] = r.temperature;
    j["max_tokens"] = r.max_tokens;
    return j;
}

std::string HttpChatBackend::extract_content(const std::string& body, const std::string& instance_id) {
    try {
        const auto j = nlohmann::json::parse(body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw TransportError(instance_id, std::string("malformed chat-completion response: ") + e.what(), false);
    }
}

std::string HttpChatBackend::complete(const ChatRequest& request, const std::string& instance_id) {
    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    client.set_write_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    auto res = client.Post(path_, headers, request_body(request).dump(), "application/json");
    if (!res) {
        throw TransportError(instance_id, "request to " + config_.endpoint + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status == 429 || res->status >= 500) {
        throw TransportError(instance_id, "endpoint returned HTTP " + std::to_string(res->status));
    }
    if (res->status != 200) {
        throw TransportError(instance_id, "endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body,
                             false);
    }
    return extract_content(res->body, instance_id);
}

// ---- mock backend ---------------------------------------------------------------

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

}  // namespace

bool MockChatBackend::Markers::found_in(const std::string& text) const {
    for (const auto& p : phrases) {
        if (text.find(p) != std::string::npos) return true;
    }
    for (const auto& stem : code_stems) {
        for (auto pos = text.find(stem); pos != std::string::npos; pos = text.find(stem, pos + 1)) {
            const bool starts = pos == 0 || !is_alnum(text[pos - 1]);
            const auto after = pos + stem.size();
            if (starts && after < text.size() && is_digit(text[after])) return true;
        }
    }
    return false;
}

MockChatBackend::Markers MockChatBackend::exposure_markers() {
    return {{"Analgesics - Opioid", "ADHD/Anti-Narcolepsy", "Opioid dependence", "Opioid abuse", "Opioid use",
             "Cocaine dependence", "stimulant dependence"},
            {"F11", "F14", "F15", "3040", "3042", "3044", "3047", "3055", "3056", "3057"}};
}

MockChatBackend::Markers MockChatBackend::dx_markers() {
    return {{"Anxiety disorder", "anxiety disorder", "depressive disorder", "Post-traumatic stress disorder",
             "chronic pain"},
            {"F41", "F32", "F33", "F431", "G892"}};
}

std::optional<MockChatBackend::Policy> mock_policy_from_string(std::string_view s) {
    using P = MockChatBackend::Policy;
    if (s == "exposure") return P::Exposure;
    if (s == "dx-marker") return P::DxMarker;
    if (s == "constant-no") return P::ConstantNo;
    if (s == "constant-yes") return P::ConstantYes;
    return std::nullopt;
}

MockChatBackend::MockChatBackend(Options options) : options_(std::move(options)) {
    if (options_.policy == Policy::Exposure) markers_ = exposure_markers();
    if (options_.policy == Policy::DxMarker) markers_ = dx_markers();
}

std::string MockChatBackend::complete(const ChatRequest& request, const std::string& instance_id) {
    ++calls_;
    const int now = ++in_flight_;
    int seen = max_in_flight_.load();
    while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
    }
    struct Release {
        std::atomic<int>& n;
        ~Release() { --n; }
    } release{in_flight_};

    if (options_.latency.count() > 0) std::this_thread::sleep_for(options_.latency);
    if (options_.permanent_failure) throw TransportError(instance_id, "mock endpoint rejects requests", false);
    if (options_.transient_failures > 0) {
        std::lock_guard lock(mutex_);
        int& failed = failures_seen_[instance_id];
        if (failed < options_.transient_failures) {
            ++failed;
            throw TransportError(instance_id, "mock transient failure " + std::to_string(failed));
        }
    }
    if (!options_.reply_override.empty()) return options_.reply_override;

    bool yes = false;
    switch (options_.policy) {
        case Policy::ConstantNo: yes = false; break;
        case Policy::ConstantYes: yes = true; break;
        case Policy::Exposure:
        case Policy::DxMarker: yes = markers_.found_in(request.user); break;
    }
    return gold_answer(yes ? Label::Overdose : Label::NoOverdose);
}

// ---- parsing -----------------------------------------------------------------

Label parse_llm_response(const std::string& text) {
    std::string lower(text.size(), ' ');
    std::transform(text.begin(), text.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });

    std::vector<std::string> words;
    for (std::size_t i = 0; i < lower.size();) {
        if (!is_alnum(lower[i]) && lower[i] != '_') {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < lower.size() && (is_alnum(lower[j]) || lower[j] == '_')) ++j;
        words.push_back(lower.substr(i, j - i));
        i = j;
    }
    const bool has_yes = std::find(words.begin(), words.end(), "yes") != words.end();
    const bool has_no = std::find(words.begin(), words.end(), "no") != words.end();
    if (has_yes && has_no) throw ParseError(text);

    if (const auto key = lower.find("overdose_risk"); key != std::string::npos) {
        std::size_t i = key + std::string_view("overdose_risk").size();
        auto skip = [&](std::string_view chars) {
            while (i < lower.size() && chars.find(lower[i]) != std::string_view::npos) ++i;
        };
        skip("\"' \t\r\n");
        if (i >= lower.size() || (lower[i] != ':' && lower[i] != '=')) throw ParseError(text);
        ++i;
        skip("\"' \t\r\n");
        if (lower.compare(i, 3, "yes") == 0 && (i + 3 == lower.size() || !is_alnum(lower[i + 3]))) {
            return Label::Overdose;
        }
        if (lower.compare(i, 2, "no") == 0 && (i + 2 == lower.size() || !is_alnum(lower[i + 2]))) {
            return Label::NoOverdose;
        }
        throw ParseError(text);
    }

    if (!words.empty()) {
        if (words.front() == "yes") return Label::Overdose;
        if (words.front() == "no") return Label::NoOverdose;
    }
    throw ParseError(text);
}

// ---- prediction --------------------------------------------------------------

Prediction llm_predict(ChatBackend& backend, const LLMConfig& config, const PromptDocument& document) {
    ChatRequest req{config.model, document.instruction, document.body, config.temperature, config.max_tokens};
    for (int attempt = 0;; ++attempt) {
        std::string reply;
        try {
            reply = backend.complete(req, document.instance_id);
        } catch (const TransportError& e) {
            if (!e.transient() || attempt >= config.max_retries) {
                throw TransportError(document.instance_id,
                                     std::string(e.what()) + " (after " + std::to_string(attempt + 1) + " attempts)",
                                     e.transient());
            }
            long delay = static_cast<long>(config.backoff_initial_ms) << std::min(attempt, 20);
            delay = std::min<long>(delay, config.backoff_max_ms);
            if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
            continue;
        }
        Prediction p;
        p.instance_id = document.instance_id;
        p.label = parse_llm_response(reply);
        p.raw_response = std::move(reply);
        return p;
    }
}

std::vector<PredictionOutcome> llm_predict_batch(ChatBackend& backend, const LLMConfig& config,
                                                 std::span<const PromptDocument> documents) {
    config.validate();
    std::vector<PredictionOutcome> out(documents.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr fatal;
    std::mutex fatal_mutex;

    auto worker = [&] {
        for (std::size_t i = next++; i < documents.size(); i = next++) {
            auto& o = out[i];
            o.instance_id = documents[i].instance_id;
            try {
                o.prediction = llm_predict(backend, config, documents[i]);
            } catch (const TransportError& e) {
                o.error_kind = "transport";
                o.error = e.what();
            } catch (const ParseError& e) {
                o.error_kind = "parse";
                o.error = e.what();
            } catch (...) {
                std::lock_guard lock(fatal_mutex);
                if (!fatal) fatal = std::current_exception();
                next = documents.size();
            }
        }
    };
    const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(config.max_concurrent), documents.size());
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    }
    if (fatal) std::rethrow_exception(fatal);
    return out;
}

// ---- predictions.jsonl ---------------------------------------------------------

nlohmann::ordered_json outcome_to_json(const PredictionOutcome& o) {
    nlohmann::ordered_json j;
    j["instance_id"] = o.instance_id;
    if (o.prediction) {
        j["label"] = to_string(o.prediction->label);
        j["score"] = o.prediction->score ? nlohmann::ordered_json(*o.prediction->score) : nlohmann::ordered_json();
        j["raw_response"] = o.prediction->raw_response ? nlohmann::ordered_json(*o.prediction->raw_response)
                                                       : nlohmann::ordered_json();
    } else {
        j["label"] = nullptr;
        j["error_kind"] = o.error_kind;
        j["error"] = o.error;
    }
    return j;
}

PredictionOutcome outcome_from_json(const nlohmann::json& j) {
    PredictionOutcome o;
    o.instance_id = j.at("instance_id").get<std::string>();
    if (j.contains("label") && !j.at("label").is_null()) {
        Prediction p;
        p.instance_id = o.instance_id;
        auto label = label_from_string(j.at("label").get<std::string>());
        if (!label) throw ValidationError("unknown label " + j.at("label").dump());
        p.label = *label;
        if (j.contains("score") && !j.at("score").is_null()) p.score = j.at("score").get<double>();
        if (j.contains("raw_response") && !j.at("raw_response").is_null()) {
            p.raw_response = j.at("raw_response").get<std::string>();
        }
        o.prediction = std::move(p);
    } else {
        o.error_kind = j.value("error_kind", "unknown");
        o.error = j.value("error", "");
    }
    return o;
}

void write_predictions(const std::filesystem::path& path, std::span<const PredictionOutcome> outcomes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& o : outcomes) out << outcome_to_json(o).dump() << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<PredictionOutcome> read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<PredictionOutcome> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(outcome_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// ---- fine-tuning export --------------------------------------------------------

std::string gold_answer(Label label) {
    return label == Label::Overdose ? R"({"overdose_risk": "yes"})" : R"({"overdose_risk": "no"})";
}

std::size_t export_finetune_dataset(std::span<const PredictionInstance> instances, PromptFormat format,
                                    int max_visits, const FieldMask& mask, const CodeDictionary& dict,
                                    const PromptTemplates& templates, const std::filesystem::path& out_path) {
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + out_path.string());
    std::size_t lines = 0;
    for (const auto& inst : instances) {
        const auto doc = render_prompt(inst, format, max_visits, mask, dict, templates);
        nlohmann::ordered_json rec;
        rec["messages"] = nlohmann::ordered_json::array({
            {{"role", "system"}, {"content", doc.instruction}},
            {{"role", "user"}, {"content", doc.body}},
            {{"role", "assistant"}, {"content", gold_answer(inst.label)}},
        });
        out << rec.dump() << '\n';
        ++lines;
    }
    if (!out) throw IoError("write failed for " + out_path.string());
    return lines;
}

}  // namespace odx
