#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odx/cohort.hpp"
#include "odx/serialize.hpp"

namespace odx {

struct WeightedCode {
    std::string code;
    std::string description;
    double weight = 1.0;
};

struct DrugSpec {
    std::string name;
    std::string therapeutic_class;
    std::string strength;
    std::string route;
    double weight = 1.0;
};

/// Sampling pools. Diagnoses are ICD-10-CM, procedures CPT.
struct CodePools {
    std::vector<WeightedCode> background_dx;
    std::vector<WeightedCode> risk_dx;      // marker diagnoses, more frequent in cases
    std::vector<WeightedCode> exposure_dx;  // opioid/stimulant use disorders
    std::vector<WeightedCode> overdose_dx;  // placed on the case anchor encounter
    std::vector<WeightedCode> adverse_dx;   // intent 5/6, emitted into every group
    std::vector<WeightedCode> procedures;
    std::vector<WeightedCode> acute_procedures;  // billed with the overdose encounter
    std::vector<DrugSpec> background_drugs;
    std::vector<DrugSpec> risk_drugs;
    std::vector<DrugSpec> exposure_drugs;

    static CodePools defaults();

    /// Descriptions of every pooled code.
    [[nodiscard]] CodeDictionary dictionary() const;
};

struct GeneratorConfig {
    std::uint64_t seed = 42;
    int n_case = 300;
    int n_control = 600;
    double exposed_fraction = 0.5;  // of controls; the same share of cases also carries exposure
    double signal_strength = 0.8;
    Date start = std::chrono::year{2020} / 1 / 1;
    Date end = std::chrono::year{2022} / 12 / 31;
    int window_days = 7;  // largest gap between the anchor and its predecessor

    // Visits per patient: max_visits minus a geometric deficit with the given
    // mean, clamped to [min_visits, max_visits].
    int min_visits = 5;
    int max_visits = 60;
    double visit_deficit_mean = 6.0;

    // Per-visit marker rates. Cases interpolate from the base rate toward the
    // case rate by signal_strength; controls always use the base rate.
    double base_risk_dx_rate = 0.06;
    double case_risk_dx_rate = 0.30;
    double base_risk_drug_rate = 0.08;
    double case_risk_drug_rate = 0.25;

    double fill_rate = 0.45;           // chance of background fills at a visit
    double adverse_rate = 0.03;        // chance of an intent 5/6 code at a visit
    double extra_exposure_rate = 0.05; // further exposure items for exposed patients

    CodePools pools = CodePools::defaults();

    /// Throws ValidationError for an infeasible or out-of-range config.
    void validate() const;

    /// Reads the keys present in `j` over the defaults. A "pools" object
    /// replaces only the pools it names. Unknown keys are rejected.
    static GeneratorConfig from_json(const nlohmann::json& j);
    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

struct LabeledPopulation {
    Split split = Split::Unspecified;
    std::vector<PatientRecord> patients;  // sorted by enrol_id
    std::vector<CohortLabel> intended;    // parallel to patients
};

/// Deterministic for a fixed (config, split). Each patient draws from its own
/// streams derived from (seed, split, index), so generation is parallel.
LabeledPopulation generate_population(const GeneratorConfig& config, Split split, std::size_t threads = 1);

inline constexpr const char* kLabelsFile = "labels.csv";
inline constexpr const char* kDictionaryFile = "dictionary.json";

/// Writes the five claims tables plus labels.csv (ENROLID,SPLIT,INTENDED_LABEL).
void write_population_tables(const LabeledPopulation& population, const std::filesystem::path& dir);

struct LabelRow {
    std::string enrol_id;
    Split split = Split::Unspecified;
    CohortLabel intended = CohortLabel::ControlNonExposed;
};

std::vector<LabelRow> read_labels(const std::filesystem::path& path);

}  // namespace odx
