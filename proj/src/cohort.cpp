#include "odx/cohort.hpp"

#include <algorithm>
#include <fstream>

#include "odx/error.hpp"

namespace odx {

PredictionWindow make_window(int days, bool allow_any) {
    if (days < 1) throw ValidationError("prediction window must be >= 1 day, got " + std::to_string(days));
    if (!allow_any && days != 7 && days != 30) {
        throw ValidationError("prediction window must be 7 or 30 days (got " + std::to_string(days) +
                              "; pass --allow-any-window to override)");
    }
    return PredictionWindow{days};
}

std::string_view to_string(CohortLabel c) {
    switch (c) {
        case CohortLabel::Case: return "case";
        case CohortLabel::ControlExposed: return "control-exposed";
        case CohortLabel::ControlNonExposed: return "control-nonexposed";
    }
    return "?";
}

std::string_view to_string(Label l) { return l == Label::Overdose ? "overdose" : "no-overdose"; }

std::string_view to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        case Split::Test: return "test";
        case Split::Unspecified: return "unspecified";
    }
    return "?";
}

std::optional<CohortLabel> cohort_from_string(std::string_view s) {
    for (auto c : {CohortLabel::Case, CohortLabel::ControlExposed, CohortLabel::ControlNonExposed}) {
        if (to_string(c) == s) return c;
    }
    return std::nullopt;
}

std::optional<Label> label_from_string(std::string_view s) {
    if (s == "overdose") return Label::Overdose;
    if (s == "no-overdose") return Label::NoOverdose;
    return std::nullopt;
}

std::optional<Split> split_from_string(std::string_view s) {
    for (auto v : {Split::Train, Split::Valid, Split::Test, Split::Unspecified}) {
        if (to_string(v) == s) return v;
    }
    return std::nullopt;
}

bool check_eligibility(const PatientRecord& patient) {
    if (patient.demographics.age_years < kMinAgeYears) return false;
    if (event_count(patient) < kMinEvents) return false;
    auto span = event_span(patient);
    return span && days_between(span->first, span->second) >= kMinSpanDays;
}

namespace {

bool has_overdose(const Encounter& e) {
    return std::any_of(e.diagnoses.begin(), e.diagnoses.end(), is_overdose_diagnosis);
}

// Latest encounter date strictly before `anchor`.
std::optional<Date> predecessor_date(const PatientRecord& patient, Date anchor) {
    std::optional<Date> best;
    for (const auto& e : patient.encounters) {
        if (e.date < anchor && (!best || e.date > *best)) best = e.date;
    }
    return best;
}

PredictionInstance make_instance(const PatientRecord& patient, Date cutoff, PredictionWindow window,
                                 Label label, CohortLabel cohort) {
    PredictionInstance inst;
    inst.enrol_id = patient.enrol_id;
    inst.cutoff_date = cutoff;
    inst.window = window;
    inst.history = truncate_history(patient, cutoff);
    inst.label = label;
    inst.cohort = cohort;
    return inst;
}

}  // namespace

CohortLabel classify_cohort(const PatientRecord& patient) {
    bool exposed = false;
    for (const auto& e : patient.encounters) {
        if (has_overdose(e)) return CohortLabel::Case;
        exposed = exposed || std::any_of(e.diagnoses.begin(), e.diagnoses.end(), is_exposure_diagnosis);
    }
    exposed = exposed || std::any_of(patient.prescriptions.begin(), patient.prescriptions.end(),
                                     is_exposure_prescription);
    return exposed ? CohortLabel::ControlExposed : CohortLabel::ControlNonExposed;
}

PatientRecord truncate_history(const PatientRecord& patient, Date cutoff) {
    PatientRecord out;
    out.enrol_id = patient.enrol_id;
    out.demographics = patient.demographics;
    for (const auto& e : patient.encounters) {
        if (e.date <= cutoff) out.encounters.push_back(e);
    }
    for (const auto& rx : patient.prescriptions) {
        if (rx.fill_date <= cutoff) out.prescriptions.push_back(rx);
    }
    return out;
}

std::optional<PredictionInstance> align_case(const PatientRecord& patient, PredictionWindow window) {
    std::optional<Date> first_overdose;
    for (const auto& e : patient.encounters) {
        if (has_overdose(e) && (!first_overdose || e.date < *first_overdose)) first_overdose = e.date;
    }
    if (!first_overdose) return std::nullopt;
    auto prev = predecessor_date(patient, *first_overdose);
    if (!prev || days_between(*prev, *first_overdose) > window.days) return std::nullopt;
    return make_instance(patient, *prev, window, Label::Overdose, CohortLabel::Case);
}

std::optional<PredictionInstance> align_control(const PatientRecord& patient, PredictionWindow window) {
    if (patient.encounters.size() < 2) return std::nullopt;
    Date last = patient.encounters.front().date;
    for (const auto& e : patient.encounters) last = std::max(last, e.date);
    auto prev = predecessor_date(patient, last);
    if (!prev || days_between(*prev, last) > window.days) return std::nullopt;
    return make_instance(patient, *prev, window, Label::NoOverdose, classify_cohort(patient));
}

TaskSet build_task_set(std::span<const PatientRecord> patients, PredictionWindow window, Split split) {
    TaskSet set;
    auto& r = set.report;
    r.patients = patients.size();
    for (const auto& p : patients) {
        if (!check_eligibility(p)) {
            ++r.ineligible;
            continue;
        }
        const auto cohort = classify_cohort(p);
        auto inst = cohort == CohortLabel::Case ? align_case(p, window) : align_control(p, window);
        if (!inst) {
            ++(cohort == CohortLabel::Case ? r.dropped_case : r.dropped_control);
            continue;
        }
        inst->split = split;
        if (cohort == CohortLabel::Case) {
            ++r.case_instances;
        } else {
            ++r.control_instances;
            if (cohort == CohortLabel::ControlExposed) ++r.exposed_instances;
        }
        set.instances.push_back(std::move(*inst));
    }
    std::sort(set.instances.begin(), set.instances.end(),
              [](const auto& a, const auto& b) { return a.enrol_id < b.enrol_id; });
    return set;
}

HistoryView recent_history(const PredictionInstance& instance, int max_visits) {
    if (max_visits < 1) throw ValidationError("max_visits must be >= 1");
    const auto& h = instance.history;
    HistoryView view;
    const std::size_t n = std::min<std::size_t>(h.encounters.size(), static_cast<std::size_t>(max_visits));
    view.encounters = std::span<const Encounter>(h.encounters).last(n);
    for (const auto& rx : h.prescriptions) {
        if (rx.fill_date > instance.cutoff_date) continue;
        if (!view.encounters.empty() && rx.fill_date < view.encounters.front().date) continue;
        view.prescriptions.push_back(&rx);
    }
    return view;
}

// ---- JSON ------------------------------------------------------------------

namespace {

nlohmann::ordered_json items_to_json(const std::vector<CodedItem>& items) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& it : items) arr.push_back({{"system", to_string(it.system)}, {"code", it.code}});
    return arr;
}

std::vector<CodedItem> items_from_json(const nlohmann::json& arr) {
    std::vector<CodedItem> out;
    for (const auto& it : arr) {
        auto sys = code_system_from_string(it.at("system").get<std::string>());
        if (!sys) throw ValidationError("unknown code system " + it.at("system").dump());
        out.push_back(make_item(*sys, it.at("code").get<std::string>()));
    }
    return out;
}

template <class T>
T require(std::optional<T> v, std::string_view what, const nlohmann::json& j) {
    if (!v) throw ValidationError("invalid " + std::string(what) + ": " + j.dump());
    return *v;
}

}  // namespace

nlohmann::ordered_json patient_to_json(const PatientRecord& p) {
    nlohmann::ordered_json j;
    j["enrol_id"] = p.enrol_id;
    j["demographics"] = {{"age", p.demographics.age_years}, {"sex", to_string(p.demographics.sex)}};
    auto enc = nlohmann::ordered_json::array();
    for (const auto& e : p.encounters) {
        enc.push_back({{"encounter_id", e.encounter_id},
                       {"date", format_date(e.date)},
                       {"diagnoses", items_to_json(e.diagnoses)},
                       {"procedures", items_to_json(e.procedures)}});
    }
    j["encounters"] = std::move(enc);
    auto rx = nlohmann::ordered_json::array();
    for (const auto& r : p.prescriptions) {
        rx.push_back({{"fill_date", format_date(r.fill_date)},
                      {"drug_name", r.drug_name},
                      {"therapeutic_class", r.therapeutic_class},
                      {"strength", r.strength},
                      {"route", r.route}});
    }
    j["prescriptions"] = std::move(rx);
    return j;
}

PatientRecord patient_from_json(const nlohmann::json& j) {
    PatientRecord p;
    p.enrol_id = j.at("enrol_id").get<std::string>();
    const auto& d = j.at("demographics");
    p.demographics.age_years = d.at("age").get<int>();
    p.demographics.sex = require(sex_from_string(d.at("sex").get<std::string>()), "sex", d);
    for (const auto& e : j.at("encounters")) {
        p.encounters.push_back(Encounter{e.at("encounter_id").get<std::string>(),
                                         parse_date(e.at("date").get<std::string>()),
                                         items_from_json(e.at("diagnoses")),
                                         items_from_json(e.at("procedures"))});
    }
    for (const auto& r : j.at("prescriptions")) {
        p.prescriptions.push_back(Prescription{parse_date(r.at("fill_date").get<std::string>()),
                                               r.at("drug_name").get<std::string>(),
                                               r.at("therapeutic_class").get<std::string>(),
                                               r.at("strength").get<std::string>(),
                                               r.at("route").get<std::string>()});
    }
    sort_chronologically(p);
    return p;
}

nlohmann::ordered_json instance_to_json(const PredictionInstance& inst) {
    nlohmann::ordered_json j;
    j["enrol_id"] = inst.enrol_id;
    j["cutoff_date"] = format_date(inst.cutoff_date);
    j["window_days"] = inst.window.days;
    j["label"] = to_string(inst.label);
    j["cohort"] = to_string(inst.cohort);
    j["split"] = to_string(inst.split);
    j["history"] = patient_to_json(inst.history);
    return j;
}

PredictionInstance instance_from_json(const nlohmann::json& j) {
    PredictionInstance inst;
    inst.enrol_id = j.at("enrol_id").get<std::string>();
    inst.cutoff_date = parse_date(j.at("cutoff_date").get<std::string>());
    inst.window = make_window(j.at("window_days").get<int>(), true);
    inst.label = require(label_from_string(j.at("label").get<std::string>()), "label", j.at("label"));
    inst.cohort = require(cohort_from_string(j.at("cohort").get<std::string>()), "cohort", j.at("cohort"));
    if (j.contains("split")) {
        inst.split = require(split_from_string(j.at("split").get<std::string>()), "split", j.at("split"));
    }
    inst.history = patient_from_json(j.at("history"));
    return inst;
}

void write_instances(const std::filesystem::path& path, std::span<const PredictionInstance> instances) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& inst : instances) out << instance_to_json(inst).dump() << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<PredictionInstance> read_instances(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<PredictionInstance> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(instance_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace odx
