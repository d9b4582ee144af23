#include "odx/claims.hpp"

#include <algorithm>

namespace odx {

std::string_view to_string(Sex sex) {
    switch (sex) {
        case Sex::F: return "F";
        case Sex::M: return "M";
        case Sex::U: return "U";
    }
    return "U";
}

std::optional<Sex> sex_from_string(std::string_view s) {
    if (s == "F") return Sex::F;
    if (s == "M") return Sex::M;
    if (s == "U") return Sex::U;
    return std::nullopt;
}

bool encounter_before(const Encounter& a, const Encounter& b) {
    if (a.date != b.date) return a.date < b.date;
    return a.encounter_id < b.encounter_id;
}

void sort_chronologically(PatientRecord& patient) {
    std::sort(patient.encounters.begin(), patient.encounters.end(), encounter_before);
    std::sort(patient.prescriptions.begin(), patient.prescriptions.end());
}

bool is_exposure_prescription(const Prescription& rx) {
    return is_exposure_class(rx.therapeutic_class);
}

std::size_t event_count(const PatientRecord& patient) {
    std::size_t n = patient.prescriptions.size();
    for (const auto& e : patient.encounters) n += e.diagnoses.size() + e.procedures.size();
    return n;
}

std::optional<std::pair<Date, Date>> event_span(const PatientRecord& patient) {
    std::optional<std::pair<Date, Date>> span;
    auto extend = [&](Date d) {
        if (!span) {
            span.emplace(d, d);
        } else {
            span->first = std::min(span->first, d);
            span->second = std::max(span->second, d);
        }
    };
    for (const auto& e : patient.encounters) extend(e.date);
    for (const auto& rx : patient.prescriptions) extend(rx.fill_date);
    return span;
}

}  // namespace odx
