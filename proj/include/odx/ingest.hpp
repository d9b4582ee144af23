#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "odx/claims.hpp"

namespace odx {

// Raw rows, one struct per claims table. Fields are kept as text so that
// validation and rejection happen in one place (parse_claims_tables).

struct EncounterRow {
    std::string enrol_id, encounter_id, svc_date;
};

struct DiagnosisRow {
    std::string enrol_id, encounter_id, code, system;
};

struct ProcedureRow {
    std::string enrol_id, encounter_id, code, system;
};

struct PrescriptionRow {
    std::string enrol_id, fill_date, drug_name, therapeutic_class, strength, route;
};

struct DemographicsRow {
    std::string enrol_id, age, sex;
};

struct ClaimsTables {
    std::vector<DiagnosisRow> diagnoses;
    std::vector<ProcedureRow> procedures;
    std::vector<EncounterRow> encounters;
    std::vector<PrescriptionRow> prescriptions;
    std::vector<DemographicsRow> demographics;
};

struct Rejection {
    std::string table;
    std::size_t row = 0;  // 0-based data-row index within its table
    std::string reason;
};

struct IngestReport {
    std::vector<Rejection> rejections;
    std::size_t patients = 0;
    std::size_t encounters = 0;
    std::size_t prescriptions = 0;
};

struct IngestResult {
    std::vector<PatientRecord> patients;  // sorted by enrol_id
    IngestReport report;
};

/// Groups rows by Enrol ID and joins diagnosis/procedure rows to encounters
/// by Encounter ID. Bad rows (dangling Encounter ID, malformed date, unknown
/// code system, empty code) are rejected individually and recorded in the
/// report; the rest of the patient's history is kept. Diagnoses and
/// procedures keep their relative table order within an encounter, so the
/// first diagnosis row of an encounter stays its primary diagnosis.
IngestResult parse_claims_tables(const ClaimsTables& tables);

/// Flattens records back into rows (inverse of parse_claims_tables).
ClaimsTables to_claims_tables(const std::vector<PatientRecord>& patients);

// File names of the five tables inside a data directory.
inline constexpr const char* kEncounterFile = "encounter.csv";
inline constexpr const char* kDiagnosisFile = "diagnosis.csv";
inline constexpr const char* kProcedureFile = "procedure.csv";
inline constexpr const char* kPrescriptionFile = "prescription.csv";
inline constexpr const char* kDemographicsFile = "demographics.csv";

ClaimsTables read_claims_directory(const std::filesystem::path& dir);
void write_claims_directory(const ClaimsTables& tables, const std::filesystem::path& dir);

}  // namespace odx
