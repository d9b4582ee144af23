#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "odx/claims.hpp"
#include "odx/cohort.hpp"

namespace odx::fixture {

inline Date day(const char* iso) { return parse_date(iso); }

struct PatientBuilder {
    PatientRecord p;

    explicit PatientBuilder(std::string id, int age = 40, Sex sex = Sex::F) {
        p.enrol_id = std::move(id);
        p.demographics = {age, sex};
    }

    PatientBuilder& visit(Date d, std::vector<std::string> icd10 = {"Z0000"}, std::vector<std::string> cpt = {}) {
        Encounter e;
        char id[32];
        std::snprintf(id, sizeof id, "%s-%03zu", p.enrol_id.c_str(), p.encounters.size());
        e.encounter_id = id;
        e.date = d;
        for (const auto& c : icd10) e.diagnoses.push_back(make_item(CodeSystem::Icd10Dx, c));
        for (const auto& c : cpt) e.procedures.push_back(make_item(CodeSystem::Cpt, c));
        p.encounters.push_back(std::move(e));
        return *this;
    }

    PatientBuilder& fill(Date d, std::string drug, std::string cls, std::string strength = "10 MG",
                         std::string route = "ORAL") {
        p.prescriptions.push_back({d, std::move(drug), std::move(cls), std::move(strength), std::move(route)});
        return *this;
    }

    PatientRecord build() {
        auto out = p;
        sort_chronologically(out);
        return out;
    }
};

// A directory removed when the test finishes.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("odx_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace odx::fixture
