#include "odx/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "odx/csv.hpp"
#include "odx/error.hpp"
#include "odx/ingest.hpp"
#include "odx/util.hpp"

namespace odx {

namespace {

WeightedCode wc(const char* code, const char* desc, double weight = 1.0) { return {code, desc, weight}; }

DrugSpec drug(const char* name, const char* cls, const char* strength, const char* route = "ORAL",
              double weight = 1.0) {
    return {name, cls, strength, route, weight};
}

}  // namespace

CodePools CodePools::defaults() {
    CodePools p;
    p.background_dx = {
        wc("I10", "Essential (primary) hypertension", 3),
        wc("E785", "Hyperlipidemia, unspecified", 2.5),
        wc("E119", "Type 2 diabetes mellitus without complications", 2),
        wc("J069", "Acute upper respiratory infection, unspecified", 2),
        wc("M545", "Low back pain", 2),
        wc("Z0000", "Encounter for general adult medical examination without abnormal findings", 1.5),
        wc("K219", "Gastro-esophageal reflux disease without esophagitis", 1.5),
        wc("R0789", "Other chest pain"),
        wc("R109", "Unspecified abdominal pain"),
        wc("M25561", "Pain in right knee"),
        wc("J45909", "Unspecified asthma, uncomplicated"),
        wc("E039", "Hypothyroidism, unspecified"),
        wc("N390", "Urinary tract infection, site not specified"),
        wc("R519", "Headache, unspecified"),
        wc("Z23", "Encounter for immunization", 1.5),
        wc("E669", "Obesity, unspecified"),
        wc("G4700", "Insomnia, unspecified"),
        wc("R42", "Dizziness and giddiness", 0.7),
        wc("L309", "Dermatitis, unspecified", 0.7),
        wc("R05", "Cough", 1.2),
        wc("M797", "Fibromyalgia", 0.5),
        wc("Z1231", "Encounter for screening mammogram for malignant neoplasm of breast", 0.6),
        wc("E559", "Vitamin D deficiency, unspecified", 0.8),
        wc("R5383", "Other fatigue", 0.8),
    };
    p.risk_dx = {
        wc("F419", "Anxiety disorder, unspecified", 3),
        wc("F411", "Generalized anxiety disorder", 2),
        wc("F329", "Major depressive disorder, single episode, unspecified", 3),
        wc("F339", "Major depressive disorder, recurrent, unspecified", 1.5),
        wc("F4310", "Post-traumatic stress disorder, unspecified"),
        wc("G8929", "Other chronic pain", 1.5),
    };
    p.exposure_dx = {
        wc("F1120", "Opioid dependence, uncomplicated", 3),
        wc("F1110", "Opioid abuse, uncomplicated", 1.5),
        wc("F1190", "Opioid use, unspecified, uncomplicated"),
        wc("F1420", "Cocaine dependence, uncomplicated"),
        wc("F1520", "Other stimulant dependence, uncomplicated"),
    };
    p.overdose_dx = {
        wc("T401X1A", "Poisoning by heroin, accidental (unintentional), initial encounter", 2),
        wc("T402X1A", "Poisoning by other opioids, accidental (unintentional), initial encounter", 3),
        wc("T40411A", "Poisoning by fentanyl or fentanyl analogs, accidental (unintentional), initial encounter", 3),
        wc("T405X1A", "Poisoning by cocaine, accidental (unintentional), initial encounter"),
        wc("T43621A", "Poisoning by amphetamines, accidental (unintentional), initial encounter"),
        wc("T424X1A", "Poisoning by benzodiazepines, accidental (unintentional), initial encounter"),
        wc("T402X2A", "Poisoning by other opioids, intentional self-harm, initial encounter", 0.5),
    };
    p.adverse_dx = {
        wc("T402X5A", "Adverse effect of other opioids, initial encounter"),
        wc("T380X5A", "Adverse effect of glucocorticoids and synthetic analogues, initial encounter"),
        wc("T383X6A", "Underdosing of insulin and oral hypoglycemic [antidiabetic] drugs, initial encounter"),
        wc("T465X6A", "Underdosing of other antihypertensive drugs, initial encounter"),
        wc("T360X5A", "Adverse effect of penicillins, initial encounter"),
    };
    p.procedures = {
        wc("99213", "Office or other outpatient visit for an established patient, low level of medical decision making", 4),
        wc("99214", "Office or other outpatient visit for an established patient, moderate level of medical decision making", 3),
        wc("99203", "Office or other outpatient visit for a new patient, low level of medical decision making"),
        wc("85025", "Complete blood count with automated differential white blood cell count", 1.5),
        wc("80053", "Comprehensive metabolic panel", 1.5),
        wc("36415", "Collection of venous blood by venipuncture", 2),
        wc("81003", "Urinalysis, automated, without microscopy"),
        wc("71046", "Radiologic examination, chest; 2 views", 0.7),
        wc("93000", "Electrocardiogram, routine, with at least 12 leads; with interpretation and report", 0.7),
        wc("90471", "Immunization administration, one vaccine", 0.8),
        wc("97110", "Therapeutic exercises to develop strength, endurance, range of motion and flexibility", 0.6),
        wc("83036", "Hemoglobin A1c level"),
        wc("80061", "Lipid panel"),
        wc("99395", "Periodic comprehensive preventive medicine reevaluation, age 18-39 years", 0.5),
    };
    p.acute_procedures = {
        wc("99285", "Emergency department visit, high level of medical decision making"),
        wc("80307", "Drug test, presumptive, by instrument chemistry analyzers"),
        wc("96374", "Therapeutic, prophylactic, or diagnostic injection; intravenous push, single drug"),
    };
    p.background_drugs = {
        drug("LISINOPRIL", "Antihypertensives", "10 MG", "ORAL", 3),
        drug("METOPROLOL SUCCINATE ER", "Beta Blockers", "25 MG", "ORAL", 2),
        drug("ATORVASTATIN CALCIUM", "Antihyperlipidemics", "20 MG", "ORAL", 3),
        drug("METFORMIN HCL", "Antidiabetics", "500 MG", "ORAL", 2),
        drug("OMEPRAZOLE", "Ulcer Drugs", "20 MG", "ORAL", 2),
        drug("IBUPROFEN", "Analgesics - Anti-Inflammatory", "800 MG", "ORAL", 1.5),
        drug("NAPROXEN", "Analgesics - Anti-Inflammatory", "500 MG"),
        drug("AMOXICILLIN", "Penicillins", "500 MG", "ORAL", 1.5),
        drug("PREDNISONE", "Corticosteroids", "10 MG"),
        drug("ALBUTEROL SULFATE HFA", "Antiasthmatic and Bronchodilator Agents", "90 MCG/ACT", "INHALATION"),
        drug("LEVOTHYROXINE SODIUM", "Thyroid Agents", "50 MCG", "ORAL", 1.5),
        drug("CETIRIZINE HCL", "Antihistamines", "10 MG", "ORAL", 0.8),
        drug("TRIAMCINOLONE ACETONIDE", "Dermatologicals", "0.1 %", "TOPICAL", 0.7),
        drug("AZITHROMYCIN", "Macrolides", "250 MG", "ORAL", 0.8),
    };
    p.risk_drugs = {
        drug("SERTRALINE HCL", "Psychother, Antidepressants", "50 MG", "ORAL", 2),
        drug("TRAZODONE HCL", "Psychother, Antidepressants", "50 MG", "ORAL", 1.5),
        drug("FLUOXETINE HCL", "Psychother, Antidepressants", "20 MG"),
        drug("BUPROPION HCL ER (XL)", "Psychother, Antidepressants", "150 MG"),
        drug("ALPRAZOLAM", "Antianxiety Agents", "0.5 MG", "ORAL", 1.5),
        drug("LORAZEPAM", "Antianxiety Agents", "1 MG"),
        drug("HYDROXYZINE HCL", "Antianxiety Agents", "25 MG"),
        drug("GABAPENTIN", "Anticonvulsants", "300 MG", "ORAL", 1.5),
        drug("CYCLOBENZAPRINE HCL", "Musculoskeletal Therapy Agents", "10 MG"),
    };
    p.exposure_drugs = {
        drug("OXYCODONE HCL", "Analgesics - Opioid", "5 MG", "ORAL", 2),
        drug("HYDROCODONE-ACETAMINOPHEN", "Analgesics - Opioid", "5-325 MG", "ORAL", 2),
        drug("TRAMADOL HCL", "Analgesics - Opioid", "50 MG", "ORAL", 1.5),
        drug("MORPHINE SULFATE ER", "Analgesics - Opioid", "15 MG", "ORAL", 0.5),
        drug("AMPHETAMINE-DEXTROAMPHETAMINE", "ADHD/Anti-Narcolepsy/Anti-Obesity/Anorexiant Agents", "20 MG"),
        drug("METHYLPHENIDATE HCL", "ADHD/Anti-Narcolepsy/Anti-Obesity/Anorexiant Agents", "10 MG", "ORAL", 0.7),
        drug("LISDEXAMFETAMINE DIMESYLATE", "ADHD/Anti-Narcolepsy/Anti-Obesity/Anorexiant Agents", "30 MG", "ORAL",
             0.5),
    };
    return p;
}

CodeDictionary CodePools::dictionary() const {
    auto dict = CodeDictionary::with_default_labels();
    for (const auto* pool : {&background_dx, &risk_dx, &exposure_dx, &overdose_dx, &adverse_dx}) {
        for (const auto& c : *pool) dict.add_code(CodeSystem::Icd10Dx, c.code, c.description);
    }
    for (const auto* pool : {&procedures, &acute_procedures}) {
        for (const auto& c : *pool) dict.add_code(CodeSystem::Cpt, c.code, c.description);
    }
    return dict;
}

void GeneratorConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ValidationError("generator config: " + msg); };
    if (n_case <= 0 || n_control <= 0) fail("n_case and n_control must be > 0");
    if (!(exposed_fraction >= 0 && exposed_fraction <= 1)) fail("exposed_fraction must lie in [0, 1]");
    if (!(signal_strength >= 0 && signal_strength <= 1)) fail("signal_strength must lie in [0, 1]");
    if (window_days < 1) fail("window_days must be >= 1");
    if (min_visits < 5 || max_visits < min_visits) fail("visit bounds must satisfy 5 <= min_visits <= max_visits");
    if (visit_deficit_mean < 0) fail("visit_deficit_mean must be >= 0");
    if (days_between(start, end) < kMinSpanDays + window_days) {
        fail("date range must span at least " + std::to_string(kMinSpanDays + window_days) + " days");
    }
    for (double r : {base_risk_dx_rate, case_risk_dx_rate, base_risk_drug_rate, case_risk_drug_rate, fill_rate,
                     adverse_rate, extra_exposure_rate}) {
        if (!(r >= 0 && r <= 1)) fail("rates must lie in [0, 1]");
    }
    const auto& p = pools;
    if (p.background_dx.empty() || p.risk_dx.empty() || p.overdose_dx.empty() || p.procedures.empty() ||
        p.background_drugs.empty() || p.risk_drugs.empty()) {
        fail("code pools must not be empty");
    }
    if (exposed_fraction > 0 && p.exposure_dx.empty() && p.exposure_drugs.empty()) {
        fail("exposure pools are empty but exposed_fraction > 0");
    }
    for (const auto& c : p.overdose_dx) {
        if (!is_overdose_diagnosis(make_item(CodeSystem::Icd10Dx, c.code))) fail("non-overdose code " + c.code);
    }
    for (const auto* pool : {&p.background_dx, &p.risk_dx, &p.adverse_dx}) {
        for (const auto& c : *pool) {
            const auto item = make_item(CodeSystem::Icd10Dx, c.code);
            if (is_overdose_diagnosis(item) || is_exposure_diagnosis(item)) {
                fail("marker code " + c.code + " in a neutral pool");
            }
        }
    }
    for (const auto& c : p.exposure_dx) {
        if (!is_exposure_diagnosis(make_item(CodeSystem::Icd10Dx, c.code))) fail("non-exposure code " + c.code);
    }
    for (const auto* pool : {&p.background_drugs, &p.risk_drugs}) {
        for (const auto& d : *pool) {
            if (is_exposure_class(d.therapeutic_class)) fail("exposure drug " + d.name + " in a neutral pool");
        }
    }
    for (const auto& d : p.exposure_drugs) {
        if (!is_exposure_class(d.therapeutic_class)) fail("non-exposure drug " + d.name + " in the exposure pool");
    }
}

namespace {

nlohmann::ordered_json codes_to_json(const std::vector<WeightedCode>& pool) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : pool) arr.push_back({{"code", c.code}, {"description", c.description}, {"weight", c.weight}});
    return arr;
}

nlohmann::ordered_json drugs_to_json(const std::vector<DrugSpec>& pool) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& d : pool) {
        arr.push_back({{"name", d.name},
                       {"therapeutic_class", d.therapeutic_class},
                       {"strength", d.strength},
                       {"route", d.route},
                       {"weight", d.weight}});
    }
    return arr;
}

std::vector<WeightedCode> codes_from_json(const nlohmann::json& arr) {
    std::vector<WeightedCode> out;
    for (const auto& c : arr) {
        out.push_back({c.at("code").get<std::string>(), c.value("description", ""), c.value("weight", 1.0)});
    }
    return out;
}

std::vector<DrugSpec> drugs_from_json(const nlohmann::json& arr) {
    std::vector<DrugSpec> out;
    for (const auto& d : arr) {
        out.push_back({d.at("name").get<std::string>(), d.at("therapeutic_class").get<std::string>(),
                       d.value("strength", ""), d.value("route", ""), d.value("weight", 1.0)});
    }
    return out;
}

}  // namespace

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "n_case") c.n_case = v.get<int>();
            else if (key == "n_control") c.n_control = v.get<int>();
            else if (key == "exposed_fraction") c.exposed_fraction = v.get<double>();
            else if (key == "signal_strength") c.signal_strength = v.get<double>();
            else if (key == "start") c.start = parse_date(v.get<std::string>());
            else if (key == "end") c.end = parse_date(v.get<std::string>());
            else if (key == "window_days") c.window_days = v.get<int>();
            else if (key == "min_visits") c.min_visits = v.get<int>();
            else if (key == "max_visits") c.max_visits = v.get<int>();
            else if (key == "visit_deficit_mean") c.visit_deficit_mean = v.get<double>();
            else if (key == "base_risk_dx_rate") c.base_risk_dx_rate = v.get<double>();
            else if (key == "case_risk_dx_rate") c.case_risk_dx_rate = v.get<double>();
            else if (key == "base_risk_drug_rate") c.base_risk_drug_rate = v.get<double>();
            else if (key == "case_risk_drug_rate") c.case_risk_drug_rate = v.get<double>();
            else if (key == "fill_rate") c.fill_rate = v.get<double>();
            else if (key == "adverse_rate") c.adverse_rate = v.get<double>();
            else if (key == "extra_exposure_rate") c.extra_exposure_rate = v.get<double>();
            else if (key == "pools") {
                for (const auto& [name, pool] : v.items()) {
                    auto& p = c.pools;
                    if (name == "background_dx") p.background_dx = codes_from_json(pool);
                    else if (name == "risk_dx") p.risk_dx = codes_from_json(pool);
                    else if (name == "exposure_dx") p.exposure_dx = codes_from_json(pool);
                    else if (name == "overdose_dx") p.overdose_dx = codes_from_json(pool);
                    else if (name == "adverse_dx") p.adverse_dx = codes_from_json(pool);
                    else if (name == "procedures") p.procedures = codes_from_json(pool);
                    else if (name == "acute_procedures") p.acute_procedures = codes_from_json(pool);
                    else if (name == "background_drugs") p.background_drugs = drugs_from_json(pool);
                    else if (name == "risk_drugs") p.risk_drugs = drugs_from_json(pool);
                    else if (name == "exposure_drugs") p.exposure_drugs = drugs_from_json(pool);
                    else throw ValidationError("generator config: unknown pool '" + name + "'");
                }
            } else {
                throw ValidationError("generator config: unknown key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("generator config: ") + e.what());
    }
    return c;
}

nlohmann::ordered_json GeneratorConfig::to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["n_case"] = n_case;
    j["n_control"] = n_control;
    j["exposed_fraction"] = exposed_fraction;
    j["signal_strength"] = signal_strength;
    j["start"] = format_date(start);
    j["end"] = format_date(end);
    j["window_days"] = window_days;
    j["min_visits"] = min_visits;
    j["max_visits"] = max_visits;
    j["visit_deficit_mean"] = visit_deficit_mean;
    j["base_risk_dx_rate"] = base_risk_dx_rate;
    j["case_risk_dx_rate"] = case_risk_dx_rate;
    j["base_risk_drug_rate"] = base_risk_drug_rate;
    j["case_risk_drug_rate"] = case_risk_drug_rate;
    j["fill_rate"] = fill_rate;
    j["adverse_rate"] = adverse_rate;
    j["extra_exposure_rate"] = extra_exposure_rate;
    j["pools"] = {{"background_dx", codes_to_json(pools.background_dx)},
                  {"risk_dx", codes_to_json(pools.risk_dx)},
                  {"exposure_dx", codes_to_json(pools.exposure_dx)},
                  {"overdose_dx", codes_to_json(pools.overdose_dx)},
                  {"adverse_dx", codes_to_json(pools.adverse_dx)},
                  {"procedures", codes_to_json(pools.procedures)},
                  {"acute_procedures", codes_to_json(pools.acute_procedures)},
                  {"background_drugs", drugs_to_json(pools.background_drugs)},
                  {"risk_drugs", drugs_to_json(pools.risk_drugs)},
                  {"exposure_drugs", drugs_to_json(pools.exposure_drugs)}};
    return j;
}

namespace {

template <class T>
const T& pick(Rng& rng, const std::vector<T>& pool) {
    std::vector<double> w;
    w.reserve(pool.size());
    for (const auto& x : pool) w.push_back(x.weight);
    return pool[rng.weighted(w)];
}

CodedItem dx_item(const WeightedCode& c) { return {CodeSystem::Icd10Dx, c.code, {}}; }
CodedItem cpt_item(const WeightedCode& c) { return {CodeSystem::Cpt, c.code, {}}; }

Prescription fill(const DrugSpec& d, Date date) {
    return {date, d.name, d.therapeutic_class, d.strength, d.route};
}

std::uint64_t split_tag(Split s) { return static_cast<std::uint64_t>(s) + 1; }

const char* split_prefix(Split s) {
    switch (s) {
        case Split::Train: return "TR";
        case Split::Valid: return "VA";
        case Split::Test: return "TE";
        case Split::Unspecified: return "UN";
    }
    return "UN";
}

int draw_visit_count(Rng& rng, const GeneratorConfig& cfg) {
    int deficit = 0;
    if (cfg.visit_deficit_mean > 0) {
        // Geometric on {0, 1, ...} with the configured mean.
        const double q = cfg.visit_deficit_mean / (1.0 + cfg.visit_deficit_mean);
        const double u = rng.uniform();
        deficit = static_cast<int>(std::floor(std::log1p(-u) / std::log(q)));
    }
    return std::clamp(cfg.max_visits - deficit, cfg.min_visits, cfg.max_visits);
}

PatientRecord generate_patient(const GeneratorConfig& cfg, Split split, std::size_t index, CohortLabel role,
                               bool exposed) {
    const auto& pools = cfg.pools;
    Rng rng(derive_seed(cfg.seed, split_tag(split), 2 * index));
    // Marker draws use their own stream with a fixed number of draws per
    // visit, so changing signal_strength only flips marker presence.
    Rng marker(derive_seed(cfg.seed, split_tag(split), 2 * index + 1));

    PatientRecord p;
    char id[32];
    std::snprintf(id, sizeof id, "%s%06zu", split_prefix(split), index + 1);
    p.enrol_id = id;
    p.demographics.age_years = static_cast<int>(rng.between(18, 84));
    p.demographics.sex = rng.chance(0.5) ? Sex::F : Sex::M;

    // Dates: anchor L, predecessor P = L - gap, first visit F with L - F >= 365.
    const int n_visits = draw_visit_count(rng, cfg);
    const long range = days_between(cfg.start, cfg.end);
    const long slack = range - kMinSpanDays - cfg.window_days;
    const Date last = add_days(cfg.end, -rng.between(0, std::min<long>(90, slack)));
    const long gap = rng.between(1, cfg.window_days);
    const Date pred = add_days(last, -gap);
    const long max_span = days_between(cfg.start, last);
    const Date first = add_days(last, -rng.between(kMinSpanDays, std::max<long>(kMinSpanDays, max_span)));

    std::vector<Date> dates{first};
    for (int i = 0; i < n_visits - 3; ++i) dates.push_back(add_days(first, rng.between(0, days_between(first, pred))));
    std::sort(dates.begin(), dates.end());
    dates.push_back(pred);
    dates.push_back(last);

    const bool is_case = role == CohortLabel::Case;
    const double s = cfg.signal_strength;
    const double dx_rate = is_case ? cfg.base_risk_dx_rate + s * (cfg.case_risk_dx_rate - cfg.base_risk_dx_rate)
                                   : cfg.base_risk_dx_rate;
    const double drug_rate =
        is_case ? cfg.base_risk_drug_rate + s * (cfg.case_risk_drug_rate - cfg.base_risk_drug_rate)
                : cfg.base_risk_drug_rate;

    const std::size_t anchor = dates.size() - 1;
    for (std::size_t v = 0; v < dates.size(); ++v) {
        Encounter e;
        char eid[48];
        std::snprintf(eid, sizeof eid, "%s-%03zu", p.enrol_id.c_str(), v + 1);
        e.encounter_id = eid;
        e.date = dates[v];

        const int n_dx = static_cast<int>(rng.between(1, 4));
        for (int k = 0; k < n_dx; ++k) {
            auto item = dx_item(pick(rng, pools.background_dx));
            if (std::find(e.diagnoses.begin(), e.diagnoses.end(), item) == e.diagnoses.end()) {
                e.diagnoses.push_back(std::move(item));
            }
        }
        const std::size_t n_proc = rng.weighted(std::initializer_list<double>{0.2, 0.5, 0.3});
        for (std::size_t k = 0; k < n_proc; ++k) {
            auto item = cpt_item(pick(rng, pools.procedures));
            if (std::find(e.procedures.begin(), e.procedures.end(), item) == e.procedures.end()) {
                e.procedures.push_back(std::move(item));
            }
        }
        if (!pools.adverse_dx.empty() && rng.chance(cfg.adverse_rate)) {
            e.diagnoses.push_back(dx_item(pick(rng, pools.adverse_dx)));
        }
        if (rng.chance(cfg.fill_rate)) {
            const int n_fill = static_cast<int>(rng.between(1, 2));
            for (int k = 0; k < n_fill; ++k) {
                const Date d = std::min(add_days(e.date, rng.between(0, 2)), last);
                p.prescriptions.push_back(fill(pick(rng, pools.background_drugs), d));
            }
        }

        // Four marker draws per visit regardless of outcome.
        const double u_dx = marker.uniform();
        const auto& risk_dx = pick(marker, pools.risk_dx);
        const double u_rx = marker.uniform();
        const auto& risk_drug = pick(marker, pools.risk_drugs);
        if (v == anchor) {
            if (is_case) {
                e.diagnoses.insert(e.diagnoses.begin(), dx_item(pick(rng, pools.overdose_dx)));
                for (const auto& c : pools.acute_procedures) e.procedures.push_back(cpt_item(c));
            }
        } else {
            if (u_dx < dx_rate) {
                auto item = dx_item(risk_dx);
                if (std::find(e.diagnoses.begin(), e.diagnoses.end(), item) == e.diagnoses.end()) {
                    e.diagnoses.push_back(std::move(item));
                }
            }
            if (u_rx < drug_rate) p.prescriptions.push_back(fill(risk_drug, e.date));
        }
        p.encounters.push_back(std::move(e));
    }

    // Exposure: one planted item among the last five history visits, plus
    // occasional further items. Applied to exposed controls and the same
    // share of cases, so exposure alone does not separate the classes.
    if (exposed) {
        const std::size_t history = anchor;  // encounters before the anchor
        const std::size_t lo = history > 5 ? history - 5 : 0;
        auto plant = [&](std::size_t v) {
            auto& e = p.encounters[v];
            const bool use_drug =
                pools.exposure_dx.empty() || (!pools.exposure_drugs.empty() && rng.chance(0.6));
            if (use_drug) {
                p.prescriptions.push_back(fill(pick(rng, pools.exposure_drugs), e.date));
            } else {
                auto item = dx_item(pick(rng, pools.exposure_dx));
                if (std::find(e.diagnoses.begin(), e.diagnoses.end(), item) == e.diagnoses.end()) {
                    e.diagnoses.push_back(std::move(item));
                }
            }
        };
        plant(static_cast<std::size_t>(rng.between(static_cast<long>(lo), static_cast<long>(history) - 1)));
        for (std::size_t v = 0; v < history; ++v) {
            if (rng.chance(cfg.extra_exposure_rate)) plant(v);
        }
    }

    sort_chronologically(p);
    return p;
}

}  // namespace

LabeledPopulation generate_population(const GeneratorConfig& config, Split split, std::size_t threads) {
    config.validate();

    // Roles: exact counts, order fixed by a seeded shuffle.
    const auto n_exposed = static_cast<int>(std::lround(config.exposed_fraction * config.n_control));
    std::vector<CohortLabel> roles;
    roles.insert(roles.end(), config.n_case, CohortLabel::Case);
    roles.insert(roles.end(), n_exposed, CohortLabel::ControlExposed);
    roles.insert(roles.end(), config.n_control - n_exposed, CohortLabel::ControlNonExposed);
    const auto n_case_exposed = std::lround(config.exposed_fraction * config.n_case);
    std::vector<bool> exposed(roles.size());
    for (std::size_t i = 0; i < roles.size(); ++i) {
        exposed[i] = roles[i] == CohortLabel::ControlExposed || static_cast<long>(i) < n_case_exposed;
    }
    Rng shuffle(derive_seed(config.seed, split_tag(split), 0xC0FFEEULL));
    for (std::size_t i = roles.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(shuffle.between(0, static_cast<long>(i) - 1));
        std::swap(roles[i - 1], roles[j]);
        std::swap(exposed[i - 1], exposed[j]);
    }

    LabeledPopulation pop;
    pop.split = split;
    pop.intended = roles;
    pop.patients.resize(roles.size());
    parallel_for(roles.size(), threads,
                 [&](std::size_t i) { pop.patients[i] = generate_patient(config, split, i, roles[i], exposed[i]); });
    return pop;
}

void write_population_tables(const LabeledPopulation& population, const std::filesystem::path& dir) {
    write_claims_directory(to_claims_tables(population.patients), dir);
    csv::Table labels{{"ENROLID", "SPLIT", "INTENDED_LABEL"}, {}};
    for (std::size_t i = 0; i < population.patients.size(); ++i) {
        labels.rows.push_back({population.patients[i].enrol_id, std::string(to_string(population.split)),
                               std::string(to_string(population.intended.at(i)))});
    }
    csv::write_file(dir / kLabelsFile, labels);
}

std::vector<LabelRow> read_labels(const std::filesystem::path& path) {
    const auto t = csv::read_file(path);
    const auto a = csv::column(t, "ENROLID", kLabelsFile), b = csv::column(t, "SPLIT", kLabelsFile),
               c = csv::column(t, "INTENDED_LABEL", kLabelsFile);
    std::vector<LabelRow> out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        const auto width = std::max({a, b, c}) + 1;
        if (r.size() < width) throw ValidationError(path.string() + ": short row " + std::to_string(i + 2));
        auto split = split_from_string(r[b]);
        auto cohort = cohort_from_string(r[c]);
        if (!split || !cohort) throw ValidationError(path.string() + ": bad label row " + std::to_string(i + 2));
        out.push_back({r[a], *split, *cohort});
    }
    return out;
}

}  // namespace odx
