#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "odx/claims.hpp"

namespace odx {

/// Prediction horizon in days (7 and 30 in the standard setup).
struct PredictionWindow {
    int days = 7;

    friend bool operator==(const PredictionWindow&, const PredictionWindow&) = default;
};

/// Throws ValidationError for days < 1, or for days outside {7, 30} unless
/// `allow_any` is set.
PredictionWindow make_window(int days, bool allow_any = false);

enum class CohortLabel { Case, ControlExposed, ControlNonExposed };
enum class Label { NoOverdose, Overdose };
enum class Split { Unspecified, Train, Valid, Test };

std::string_view to_string(CohortLabel c);
std::string_view to_string(Label l);
std::string_view to_string(Split s);
std::optional<CohortLabel> cohort_from_string(std::string_view s);
std::optional<Label> label_from_string(std::string_view s);
std::optional<Split> split_from_string(std::string_view s);

struct PredictionInstance {
    std::string enrol_id;
    Date cutoff_date{};
    PredictionWindow window;
    PatientRecord history;  // events dated <= cutoff_date only
    Label label = Label::NoOverdose;
    CohortLabel cohort = CohortLabel::ControlNonExposed;
    Split split = Split::Unspecified;

    /// One instance per patient per task set, so the Enrol ID is the key.
    [[nodiscard]] const std::string& instance_id() const { return enrol_id; }

    friend bool operator==(const PredictionInstance&, const PredictionInstance&) = default;
};

// Minimum age, event span and event count for inclusion.
inline constexpr int kMinAgeYears = 18;
inline constexpr long kMinSpanDays = 365;
inline constexpr std::size_t kMinEvents = 5;

/// Age >= 18, first-to-last event span >= 365 days (inclusive), and at least
/// five diagnoses + procedures + prescription fills.
bool check_eligibility(const PatientRecord& patient);

/// Case if any encounter carries an overdose diagnosis; otherwise exposed if
/// any exposure prescription or exposure diagnosis exists.
CohortLabel classify_cohort(const PatientRecord& patient);

/// Keeps encounters and fills dated on or before `cutoff`.
PatientRecord truncate_history(const PatientRecord& patient, Date cutoff);

/// Anchors on the first overdose encounter; the cutoff is the latest
/// encounter dated strictly before it, accepted when the gap is <= window.
std::optional<PredictionInstance> align_case(const PatientRecord& patient, PredictionWindow window);

/// Anchors on the most recent encounter; same predecessor rule as align_case.
std::optional<PredictionInstance> align_control(const PatientRecord& patient, PredictionWindow window);

struct TaskSetReport {
    std::size_t patients = 0;
    std::size_t ineligible = 0;
    std::size_t case_instances = 0;
    std::size_t control_instances = 0;
    std::size_t exposed_instances = 0;
    std::size_t dropped_case = 0;
    std::size_t dropped_control = 0;
};

struct TaskSet {
    std::vector<PredictionInstance> instances;  // sorted by enrol_id
    TaskSetReport report;
};

/// Aligns every patient for `window`. Ineligible patients and patients whose
/// predecessor gap exceeds the window are counted, not returned.
TaskSet build_task_set(std::span<const PatientRecord> patients, PredictionWindow window,
                       Split split = Split::Unspecified);

/// The part of an instance's history a model sees under a visit limit: the
/// last `max_visits` encounters, plus fills dated from the first of those
/// encounters through the cutoff.
struct HistoryView {
    std::span<const Encounter> encounters;
    std::vector<const Prescription*> prescriptions;
};

HistoryView recent_history(const PredictionInstance& instance, int max_visits);

// instances.jsonl: one JSON object per line.
nlohmann::ordered_json patient_to_json(const PatientRecord& p);
PatientRecord patient_from_json(const nlohmann::json& j);
nlohmann::ordered_json instance_to_json(const PredictionInstance& inst);
PredictionInstance instance_from_json(const nlohmann::json& j);

void write_instances(const std::filesystem::path& path, std::span<const PredictionInstance> instances);
std::vector<PredictionInstance> read_instances(const std::filesystem::path& path);

}  // namespace odx
