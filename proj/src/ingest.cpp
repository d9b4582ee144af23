#include "odx/ingest.hpp"

#include <charconv>
#include <map>
#include <set>

#include "odx/csv.hpp"
#include "odx/error.hpp"

namespace odx {

namespace {

std::optional<CodeSystem> diagnosis_system(const std::string& s) {
    if (s == "9") return CodeSystem::Icd9Dx;
    if (s == "0" || s == "10") return CodeSystem::Icd10Dx;
    auto sys = code_system_from_string(s);
    if (sys && is_diagnosis_system(*sys)) return sys;
    return std::nullopt;
}

std::optional<CodeSystem> procedure_system(const std::string& s) {
    auto sys = code_system_from_string(s);
    if (sys && !is_diagnosis_system(*sys)) return sys;
    return std::nullopt;
}

std::optional<int> parse_age(const std::string& s) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || v < 0) return std::nullopt;
    return v;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t") == std::string::npos; }

struct PatientBuilder {
    std::optional<Demographics> demographics;
    std::map<std::string, Encounter> encounters;  // by encounter_id
    std::vector<Prescription> prescriptions;
};

}  // namespace

IngestResult parse_claims_tables(const ClaimsTables& tables) {
    IngestResult result;
    auto& report = result.report;
    std::map<std::string, PatientBuilder> patients;

    auto reject = [&](const char* table, std::size_t row, std::string reason) {
        report.rejections.push_back({table, row, std::move(reason)});
    };

    for (std::size_t i = 0; i < tables.demographics.size(); ++i) {
        const auto& r = tables.demographics[i];
        auto age = parse_age(r.age);
        auto sex = sex_from_string(r.sex);
        if (blank(r.enrol_id)) {
            reject("demographics", i, "empty ENROLID");
        } else if (!age) {
            reject("demographics", i, "malformed AGE '" + r.age + "'");
        } else if (!sex) {
            reject("demographics", i, "malformed SEX '" + r.sex + "'");
        } else if (patients[r.enrol_id].demographics) {
            reject("demographics", i, "duplicate ENROLID " + r.enrol_id);
        } else {
            patients[r.enrol_id].demographics = Demographics{*age, *sex};
        }
    }

    for (std::size_t i = 0; i < tables.encounters.size(); ++i) {
        const auto& r = tables.encounters[i];
        auto date = try_parse_date(r.svc_date);
        if (blank(r.enrol_id) || blank(r.encounter_id)) {
            reject("encounter", i, "empty ENROLID or ENCOUNTERID");
            continue;
        }
        if (!date) {
            reject("encounter", i, "malformed SVCDATE '" + r.svc_date + "'");
            continue;
        }
        auto& enc = patients[r.enrol_id].encounters;
        if (enc.contains(r.encounter_id)) {
            reject("encounter", i, "duplicate ENCOUNTERID " + r.encounter_id);
            continue;
        }
        enc.emplace(r.encounter_id, Encounter{r.encounter_id, *date, {}, {}});
    }

    auto find_encounter = [&](const std::string& enrol, const std::string& id) -> Encounter* {
        auto p = patients.find(enrol);
        if (p == patients.end()) return nullptr;
        auto e = p->second.encounters.find(id);
        return e == p->second.encounters.end() ? nullptr : &e->second;
    };

    auto attach = [&](const char* table, std::size_t i, const std::string& enrol,
                      const std::string& encounter_id, const std::string& code,
                      std::optional<CodeSystem> sys, const std::string& sys_name, bool diagnosis) {
        if (!sys) {
            reject(table, i, "unknown code system '" + sys_name + "'");
            return;
        }
        if (blank(code)) {
            reject(table, i, "empty code");
            return;
        }
        Encounter* enc = find_encounter(enrol, encounter_id);
        if (!enc) {
            reject(table, i, "dangling ENCOUNTERID " + encounter_id + " for ENROLID " + enrol);
            return;
        }
        auto item = make_item(*sys, code);
        (diagnosis ? enc->diagnoses : enc->procedures).push_back(std::move(item));
    };

    for (std::size_t i = 0; i < tables.diagnoses.size(); ++i) {
        const auto& r = tables.diagnoses[i];
        attach("diagnosis", i, r.enrol_id, r.encounter_id, r.code, diagnosis_system(r.system),
               r.system, true);
    }
    for (std::size_t i = 0; i < tables.procedures.size(); ++i) {
        const auto& r = tables.procedures[i];
        attach("procedure", i, r.enrol_id, r.encounter_id, r.code, procedure_system(r.system),
               r.system, false);
    }

    for (std::size_t i = 0; i < tables.prescriptions.size(); ++i) {
        const auto& r = tables.prescriptions[i];
        auto date = try_parse_date(r.fill_date);
        if (blank(r.enrol_id)) {
            reject("prescription", i, "empty ENROLID");
        } else if (!date) {
            reject("prescription", i, "malformed FILLDATE '" + r.fill_date + "'");
        } else {
            patients[r.enrol_id].prescriptions.push_back(
                Prescription{*date, r.drug_name, r.therapeutic_class, r.strength, r.route});
        }
    }

    result.patients.reserve(patients.size());
    for (auto& [enrol_id, b] : patients) {
        PatientRecord rec;
        rec.enrol_id = enrol_id;
        if (b.demographics) {
            rec.demographics = *b.demographics;
        } else {
            reject("demographics", tables.demographics.size(), "no demographics for ENROLID " + enrol_id);
        }
        for (auto& [id, e] : b.encounters) rec.encounters.push_back(std::move(e));
        rec.prescriptions = std::move(b.prescriptions);
        sort_chronologically(rec);
        report.encounters += rec.encounters.size();
        report.prescriptions += rec.prescriptions.size();
        result.patients.push_back(std::move(rec));
    }
    report.patients = result.patients.size();
    return result;
}

ClaimsTables to_claims_tables(const std::vector<PatientRecord>& patients) {
    ClaimsTables t;
    for (const auto& p : patients) {
        t.demographics.push_back({p.enrol_id, std::to_string(p.demographics.age_years),
                                  std::string(to_string(p.demographics.sex))});
        for (const auto& e : p.encounters) {
            t.encounters.push_back({p.enrol_id, e.encounter_id, format_date(e.date)});
            for (const auto& d : e.diagnoses) {
                t.diagnoses.push_back({p.enrol_id, e.encounter_id, d.code, std::string(to_string(d.system))});
            }
            for (const auto& pr : e.procedures) {
                t.procedures.push_back({p.enrol_id, e.encounter_id, pr.code, std::string(to_string(pr.system))});
            }
        }
        for (const auto& rx : p.prescriptions) {
            t.prescriptions.push_back({p.enrol_id, format_date(rx.fill_date), rx.drug_name,
                                       rx.therapeutic_class, rx.strength, rx.route});
        }
    }
    return t;
}

namespace {

csv::Table load(const std::filesystem::path& dir, const char* name, bool required) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) {
        if (required) throw IoError("missing table " + path.string());
        return {};
    }
    return csv::read_file(path);
}

// Returns the value at `idx`, or "" for short rows (they fail validation later).
const std::string& cell(const csv::Row& row, std::size_t idx) {
    static const std::string empty;
    return idx < row.size() ? row[idx] : empty;
}

}  // namespace

ClaimsTables read_claims_directory(const std::filesystem::path& dir) {
    ClaimsTables t;

    const auto enc = load(dir, kEncounterFile, true);
    {
        auto a = csv::column(enc, "ENROLID", kEncounterFile), b = csv::column(enc, "ENCOUNTERID", kEncounterFile),
             c = csv::column(enc, "SVCDATE", kEncounterFile);
        for (const auto& r : enc.rows) t.encounters.push_back({cell(r, a), cell(r, b), cell(r, c)});
    }
    const auto dx = load(dir, kDiagnosisFile, true);
    {
        auto a = csv::column(dx, "ENROLID", kDiagnosisFile), b = csv::column(dx, "ENCOUNTERID", kDiagnosisFile),
             c = csv::column(dx, "DIAG_CD", kDiagnosisFile), d = csv::column(dx, "DIAG_SYS", kDiagnosisFile);
        for (const auto& r : dx.rows) t.diagnoses.push_back({cell(r, a), cell(r, b), cell(r, c), cell(r, d)});
    }
    const auto pr = load(dir, kProcedureFile, true);
    {
        auto a = csv::column(pr, "ENROLID", kProcedureFile), b = csv::column(pr, "ENCOUNTERID", kProcedureFile),
             c = csv::column(pr, "PROC_CD", kProcedureFile), d = csv::column(pr, "PROC_SYS", kProcedureFile);
        for (const auto& r : pr.rows) t.procedures.push_back({cell(r, a), cell(r, b), cell(r, c), cell(r, d)});
    }
    const auto rx = load(dir, kPrescriptionFile, true);
    {
        auto a = csv::column(rx, "ENROLID", kPrescriptionFile), b = csv::column(rx, "FILLDATE", kPrescriptionFile),
             c = csv::column(rx, "DRUGNAME", kPrescriptionFile), d = csv::column(rx, "THERCLS", kPrescriptionFile),
             e = csv::column(rx, "STRENGTH", kPrescriptionFile), f = csv::column(rx, "ROUTE", kPrescriptionFile);
        for (const auto& r : rx.rows) {
            t.prescriptions.push_back({cell(r, a), cell(r, b), cell(r, c), cell(r, d), cell(r, e), cell(r, f)});
        }
    }
    const auto demo = load(dir, kDemographicsFile, true);
    {
        auto a = csv::column(demo, "ENROLID", kDemographicsFile), b = csv::column(demo, "AGE", kDemographicsFile),
             c = csv::column(demo, "SEX", kDemographicsFile);
        for (const auto& r : demo.rows) t.demographics.push_back({cell(r, a), cell(r, b), cell(r, c)});
    }
    return t;
}

void write_claims_directory(const ClaimsTables& t, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    csv::Table enc{{"ENROLID", "ENCOUNTERID", "SVCDATE"}, {}};
    for (const auto& r : t.encounters) enc.rows.push_back({r.enrol_id, r.encounter_id, r.svc_date});
    csv::write_file(dir / kEncounterFile, enc);

    csv::Table dx{{"ENROLID", "ENCOUNTERID", "DIAG_CD", "DIAG_SYS"}, {}};
    for (const auto& r : t.diagnoses) dx.rows.push_back({r.enrol_id, r.encounter_id, r.code, r.system});
    csv::write_file(dir / kDiagnosisFile, dx);

    csv::Table pr{{"ENROLID", "ENCOUNTERID", "PROC_CD", "PROC_SYS"}, {}};
    for (const auto& r : t.procedures) pr.rows.push_back({r.enrol_id, r.encounter_id, r.code, r.system});
    csv::write_file(dir / kProcedureFile, pr);

    csv::Table rx{{"ENROLID", "FILLDATE", "DRUGNAME", "THERCLS", "STRENGTH", "ROUTE"}, {}};
    for (const auto& r : t.prescriptions) {
        rx.rows.push_back({r.enrol_id, r.fill_date, r.drug_name, r.therapeutic_class, r.strength, r.route});
    }
    csv::write_file(dir / kPrescriptionFile, rx);

    csv::Table demo{{"ENROLID", "AGE", "SEX"}, {}};
    for (const auto& r : t.demographics) demo.rows.push_back({r.enrol_id, r.age, r.sex});
    csv::write_file(dir / kDemographicsFile, demo);
}

}  // namespace odx
