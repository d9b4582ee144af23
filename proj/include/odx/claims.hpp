#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "odx/codes.hpp"
#include "odx/date.hpp"

namespace odx {

struct Encounter {
    std::string encounter_id;
    Date date{};
    std::vector<CodedItem> diagnoses;
    std::vector<CodedItem> procedures;

    friend bool operator==(const Encounter&, const Encounter&) = default;
};

struct Prescription {
    Date fill_date{};
    std::string drug_name;
    std::string therapeutic_class;
    std::string strength;
    std::string route;

    friend bool operator==(const Prescription&, const Prescription&) = default;
    friend auto operator<=>(const Prescription&, const Prescription&) = default;
};

enum class Sex { F, M, U };

std::string_view to_string(Sex sex);
std::optional<Sex> sex_from_string(std::string_view s);

struct Demographics {
    int age_years = 0;
    Sex sex = Sex::U;

    friend bool operator==(const Demographics&, const Demographics&) = default;
};

/// One enrollee's longitudinal record. Encounters are kept sorted by
/// (date, encounter_id) and prescriptions by fill date; see sort_chronologically.
struct PatientRecord {
    std::string enrol_id;
    Demographics demographics;
    std::vector<Encounter> encounters;
    std::vector<Prescription> prescriptions;

    friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

/// Restores the ordering invariant. Prescriptions sharing a fill date are
/// ordered by their remaining fields so the result is fully determined.
void sort_chronologically(PatientRecord& patient);

bool encounter_before(const Encounter& a, const Encounter& b);

bool is_exposure_prescription(const Prescription& rx);

/// Diagnoses + procedures + prescription fills.
std::size_t event_count(const PatientRecord& patient);

/// Earliest and latest encounter or fill date; nullopt for an empty record.
std::optional<std::pair<Date, Date>> event_span(const PatientRecord& patient);

}  // namespace odx
