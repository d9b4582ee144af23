#include "odx/serialize.hpp"

#include <fstream>
#include <sstream>

#include "odx/error.hpp"
#include "odx/tokens.hpp"

namespace odx {

using ojson = nlohmann::ordered_json;

// ---- formats -------------------------------------------------------

std::string_view to_string(PromptFormat f) {
    switch (f) {
        case PromptFormat::DetailedDescriptive: return "detailed-descriptive";
        case PromptFormat::DetailedCode: return "detailed-code";
        case PromptFormat::SummarizedDescriptive: return "summarized-descriptive";
        case PromptFormat::SummarizedCode: return "summarized-code";
    }
    return "?";
}

std::optional<PromptFormat> prompt_format_from_string(std::string_view s) {
    for (auto f : kAllFormats) {
        if (to_string(f) == s) return f;
    }
    return std::nullopt;
}

bool is_detailed(PromptFormat f) {
    return f == PromptFormat::DetailedDescriptive || f == PromptFormat::DetailedCode;
}

bool is_descriptive(PromptFormat f) {
    return f == PromptFormat::DetailedDescriptive || f == PromptFormat::SummarizedDescriptive;
}

// ---- dictionary ---------------------------------------------------------------

namespace {

// Raw field name -> readable label used by the descriptive formats.
const std::pair<const char*, const char*> kDefaultFieldLabels[] = {
    {"DEMOGRAPHICS", "demographics"},
    {"AGE", "age"},
    {"SEX", "sex"},
    {"ENCOUNTERS", "encounters"},
    {"SVCDATE", "service date"},
    {"DIAG_CD", "diagnosis code"},
    {"PROC_CD", "procedure code"},
    {"PRESCRIPTIONS", "prescriptions"},
    {"FILLDATE", "fill date"},
    {"DRUGNAME", "drug name"},
    {"THERCLS", "therapeutic class"},
    {"STRENGTH", "strength"},
    {"ROUTE", "route"},
    {"PDX", "primary diagnosis"},
    {"SDX", "secondary diagnosis"},
    {"PROC", "procedure"},
    {"THERCLS_STR_RT", "therapeutic class, strength and route"},
};

}  // namespace

CodeDictionary CodeDictionary::with_default_labels() {
    CodeDictionary d;
    for (const auto& [field, label] : kDefaultFieldLabels) d.fields_.emplace(field, label);
    return d;
}

void CodeDictionary::add_code(CodeSystem system, std::string code, std::string description) {
    code = normalize_code(code, system);
    codes_[{system, std::move(code)}] = std::move(description);
}

void CodeDictionary::set_field_label(std::string field, std::string label) {
    fields_[std::move(field)] = std::move(label);
}

std::string CodeDictionary::describe(CodeSystem system, const std::string& code) const {
    auto it = codes_.find({system, code});
    return it == codes_.end() ? code : it->second;
}

std::string CodeDictionary::field_label(const std::string& field) const {
    auto it = fields_.find(field);
    return it == fields_.end() ? field : it->second;
}

ojson CodeDictionary::to_json() const {
    ojson j;
    ojson codes = ojson::object();
    for (const auto& [key, desc] : codes_) codes[std::string(to_string(key.first))][key.second] = desc;
    j["codes"] = std::move(codes);
    ojson fields = ojson::object();
    for (const auto& [f, l] : fields_) fields[f] = l;
    j["fields"] = std::move(fields);
    return j;
}

CodeDictionary CodeDictionary::from_json(const nlohmann::json& j) {
    auto d = with_default_labels();
    if (j.contains("codes")) {
        for (const auto& [sys_name, entries] : j.at("codes").items()) {
            auto sys = code_system_from_string(sys_name);
            if (!sys) throw ValidationError("dictionary: unknown code system " + sys_name);
            for (const auto& [code, desc] : entries.items()) d.add_code(*sys, code, desc.get<std::string>());
        }
    }
    if (j.contains("fields")) {
        for (const auto& [field, label] : j.at("fields").items()) d.set_field_label(field, label.get<std::string>());
    }
    return d;
}

CodeDictionary CodeDictionary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dictionary " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void CodeDictionary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json().dump(1) << '\n';
}

// ---- templates ---------------------------------------------------------------

namespace {

constexpr std::string_view kAnswerSchema =
    "Answer with exactly one JSON object and nothing else: {\"overdose_risk\": \"yes\"} if an overdose is "
    "likely, or {\"overdose_risk\": \"no\"} otherwise.";

std::string default_template(PromptFormat f) {
    std::string head =
        "You are a clinical decision support assistant reviewing a patient's insurance claims history. ";
    switch (f) {
        case PromptFormat::DetailedDescriptive:
            head +=
                "The history below is a JSON document with the patient's demographics, then the visits in "
                "chronological order (earliest first) with the diagnoses and procedures of each visit, then the "
                "prescriptions ordered by fill date. Medical codes are replaced by their descriptions. ";
            break;
        case PromptFormat::DetailedCode:
            head +=
                "The history below is a JSON document with the patient's demographics, then the visits in "
                "chronological order (earliest first) with the diagnoses and procedures of each visit, then the "
                "prescriptions ordered by fill date. Diagnoses are ICD-9-CM or ICD-10-CM codes, procedures are "
                "CPT or ICD-9 procedure codes, and field names are the original database column names. ";
            break;
        case PromptFormat::SummarizedDescriptive:
            head +=
                "The history below is a JSON object of key-value pairs: the patient's age and sex, then every "
                "diagnosis, procedure, drug, and therapeutic class seen in the recent visits, each with the "
                "number of times it occurred. Medical codes are replaced by their descriptions. ";
            break;
        case PromptFormat::SummarizedCode:
            head +=
                "The history below is a JSON object of key-value pairs: the patient's age and sex, then every "
                "diagnosis code, procedure code, drug, and therapeutic class seen in the recent visits, each "
                "with the number of times it occurred. Diagnoses are ICD-9-CM or ICD-10-CM codes and procedures "
                "are CPT or ICD-9 procedure codes. ";
            break;
    }
    head += "Predict whether this patient will experience a drug overdose within the next {window_days} days. ";
    head += kAnswerSchema;
    return head;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
    return s;
}

}  // namespace

PromptTemplates PromptTemplates::defaults() {
    PromptTemplates t;
    for (auto f : kAllFormats) t.text_[f] = default_template(f);
    return t;
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
    PromptTemplates t;
    for (auto f : kAllFormats) {
        const auto path = dir / (std::string(to_string(f)) + ".txt");
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("missing prompt template " + path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        std::string text = ss.str();
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        if (text.find("{window_days}") == std::string::npos) {
            throw ValidationError("template " + path.string() + " lacks the {window_days} placeholder");
        }
        t.text_[f] = std::move(text);
    }
    return t;
}

const std::string& PromptTemplates::raw(PromptFormat format) const { return text_.at(format); }

std::string PromptTemplates::instruction(PromptFormat format, PredictionWindow window) const {
    return replace_all(raw(format), "{window_days}", std::to_string(window.days));
}

// ---- rendering ---------------------------------------------------------------

std::map<FeatureKey, long> summarize_history(const PredictionInstance& instance, int max_visits,
                                             const FieldMask& mask) {
    return count_feature_items(recent_history(instance, max_visits), mask);
}

namespace {

std::string sex_value(Sex s, bool descriptive) {
    if (!descriptive) return std::string(to_string(s));
    switch (s) {
        case Sex::F: return "female";
        case Sex::M: return "male";
        case Sex::U: return "unknown";
    }
    return "unknown";
}

class BodyWriter {
public:
    BodyWriter(const CodeDictionary& dict, bool descriptive) : dict_(dict), descriptive_(descriptive) {}

    [[nodiscard]] std::string field(const char* raw) const {
        return descriptive_ ? dict_.field_label(raw) : std::string(raw);
    }

    [[nodiscard]] std::string value(const CodedItem& item) const {
        return descriptive_ ? dict_.describe(item.system, item.code) : item.code;
    }

    [[nodiscard]] ojson demographics(const Demographics& d) const {
        ojson j;
        j[field("AGE")] = d.age_years;
        j[field("SEX")] = sex_value(d.sex, descriptive_);
        return j;
    }

    [[nodiscard]] ojson encounter(const Encounter& e, const FieldMask& mask) const {
        ojson j;
        j[field("SVCDATE")] = format_date(e.date);
        if (mask.diagnoses) {
            auto arr = ojson::array();
            for (const auto& d : e.diagnoses) arr.push_back(value(d));
            j[field("DIAG_CD")] = std::move(arr);
        }
        if (mask.procedures) {
            auto arr = ojson::array();
            for (const auto& p : e.procedures) arr.push_back(value(p));
            j[field("PROC_CD")] = std::move(arr);
        }
        return j;
    }

    [[nodiscard]] ojson prescription(const Prescription& rx) const {
        ojson j;
        j[field("FILLDATE")] = format_date(rx.fill_date);
        j[field("DRUGNAME")] = rx.drug_name;
        j[field("THERCLS")] = rx.therapeutic_class;
        j[field("STRENGTH")] = rx.strength;
        j[field("ROUTE")] = rx.route;
        return j;
    }

    [[nodiscard]] std::string summary_key(const FeatureKey& key) const {
        std::string value = key.value;
        const char* raw = "";
        switch (key.type) {
            case FeatureType::PrimaryDx: raw = "PDX"; break;
            case FeatureType::SecondaryDx: raw = "SDX"; break;
            case FeatureType::Procedure: raw = "PROC"; break;
            case FeatureType::DrugName: raw = "DRUGNAME"; break;
            case FeatureType::TheraClassStrengthRoute: raw = "THERCLS_STR_RT"; break;
        }
        const bool coded = key.type == FeatureType::PrimaryDx || key.type == FeatureType::SecondaryDx ||
                           key.type == FeatureType::Procedure;
        if (descriptive_ && coded) value = dict_.describe(key.system, key.value);
        return field(raw) + ": " + value;
    }

private:
    const CodeDictionary& dict_;
    bool descriptive_;
};

// Writes `"key": value` members one per line inside braces.
std::string json_lines(const std::vector<std::pair<std::string, std::string>>& members) {
    std::string out = "{";
    for (std::size_t i = 0; i < members.size(); ++i) {
        if (i) out += ",\n ";
        out += ojson(members[i].first).dump() + ": " + members[i].second;
    }
    out += "}";
    return out;
}

std::string json_array_lines(const std::vector<ojson>& items) {
    if (items.empty()) return "[]";
    std::string out = "[\n";
    for (std::size_t i = 0; i < items.size(); ++i) {
        out += "  " + items[i].dump();
        out += i + 1 < items.size() ? ",\n" : "\n";
    }
    out += " ]";
    return out;
}

}  // namespace

PromptDocument render_prompt(const PredictionInstance& instance, PromptFormat format, int max_visits,
                             const FieldMask& mask, const CodeDictionary& dict, const PromptTemplates& templates) {
    if (!mask.any()) throw ValidationError("field mask disables every field");
    if (max_visits < 1) throw ValidationError("max_visits must be >= 1");
    if (instance.history.encounters.empty()) {
        throw ValidationError("instance " + instance.enrol_id + " has no encounters to render");
    }

    const bool descriptive = is_descriptive(format);
    const BodyWriter w(dict, descriptive);
    const auto view = recent_history(instance, max_visits);

    std::vector<std::pair<std::string, std::string>> members;
    if (is_detailed(format)) {
        members.emplace_back(w.field("DEMOGRAPHICS"), w.demographics(instance.history.demographics).dump());
        std::vector<ojson> encounters;
        for (const auto& e : view.encounters) encounters.push_back(w.encounter(e, mask));
        members.emplace_back(w.field("ENCOUNTERS"), json_array_lines(encounters));
        if (mask.prescriptions) {
            std::vector<ojson> fills;
            for (const Prescription* rx : view.prescriptions) fills.push_back(w.prescription(*rx));
            members.emplace_back(w.field("PRESCRIPTIONS"), json_array_lines(fills));
        }
    } else {
        const auto& d = instance.history.demographics;
        members.emplace_back(w.field("AGE"), std::to_string(d.age_years));
        members.emplace_back(w.field("SEX"), ojson(sex_value(d.sex, descriptive)).dump());
        for (const auto& [key, count] : count_feature_items(view, mask)) {
            members.emplace_back(w.summary_key(key), std::to_string(count));
        }
    }

    PromptDocument doc;
    doc.instance_id = instance.instance_id();
    doc.format = format;
    doc.window_days = instance.window.days;
    doc.instruction = templates.instruction(format, instance.window);
    doc.body = json_lines(members);
    doc.token_estimate = estimate_tokens(doc.instruction + doc.body);
    doc.visits_included = static_cast<int>(view.encounters.size());
    return doc;
}

// ---- prompts.jsonl -----------------------------------------------------------

ojson prompt_to_json(const PromptDocument& doc) {
    ojson j;
    j["instance_id"] = doc.instance_id;
    j["format"] = to_string(doc.format);
    j["window_days"] = doc.window_days;
    j["token_estimate"] = doc.token_estimate;
    j["visits_included"] = doc.visits_included;
    j["prompt_text"] = doc.prompt_text();
    j["instruction"] = doc.instruction;
    j["body"] = doc.body;
    return j;
}

PromptDocument prompt_from_json(const nlohmann::json& j) {
    PromptDocument doc;
    doc.instance_id = j.at("instance_id").get<std::string>();
    auto f = prompt_format_from_string(j.at("format").get<std::string>());
    if (!f) throw ValidationError("unknown prompt format " + j.at("format").dump());
    doc.format = *f;
    doc.window_days = j.at("window_days").get<int>();
    doc.token_estimate = j.at("token_estimate").get<long>();
    doc.visits_included = j.value("visits_included", 0);
    doc.instruction = j.at("instruction").get<std::string>();
    doc.body = j.at("body").get<std::string>();
    return doc;
}

void write_prompts(const std::filesystem::path& path, std::span<const PromptDocument> docs) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& d : docs) out << prompt_to_json(d).dump() << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<PromptDocument> read_prompts(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<PromptDocument> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(prompt_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace odx
