#include "odx/codes.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "odx/error.hpp"

namespace odx {

namespace {

constexpr std::array<std::pair<CodeSystem, std::string_view>, 6> kSystemNames{{
    {CodeSystem::Icd9Dx, "ICD9-DX"},
    {CodeSystem::Icd10Dx, "ICD10-DX"},
    {CodeSystem::Icd9Pcs, "ICD9-PCS"},
    {CodeSystem::Cpt, "CPT"},
    {CodeSystem::TheraClass, "THERA-CLASS"},
    {CodeSystem::NdcName, "NDC-NAME"},
}};

constexpr std::array<std::string_view, 8> kIcd9OverdosePrefixes{
    "965", "968", "969", "970", "E850", "E853", "E854", "E858"};

constexpr std::array<std::string_view, 3> kIcd10ExposurePrefixes{"F11", "F14", "F15"};

constexpr std::array<std::string_view, 8> kIcd9ExposurePrefixes{
    "3040", "3042", "3044", "3047", "3055", "3056", "3057", "3058"};

constexpr std::string_view kOpioidClass = "Analgesics - Opioid";
constexpr std::string_view kStimulantClass = "ADHD/Anti-Narcolepsy/Anti-Obesity/Anorexiant Agents";

template <std::size_t N>
bool has_any_prefix(std::string_view code, const std::array<std::string_view, N>& prefixes) {
    return std::any_of(prefixes.begin(), prefixes.end(),
                       [&](std::string_view p) { return code.starts_with(p); });
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::string_view to_string(CodeSystem system) {
    for (const auto& [s, name] : kSystemNames) {
        if (s == system) return name;
    }
    return "?";
}

std::optional<CodeSystem> code_system_from_string(std::string_view name) {
    for (const auto& [s, n] : kSystemNames) {
        if (n == name) return s;
    }
    return std::nullopt;
}

bool is_icd(CodeSystem system) {
    return system == CodeSystem::Icd9Dx || system == CodeSystem::Icd10Dx ||
           system == CodeSystem::Icd9Pcs;
}

bool is_diagnosis_system(CodeSystem system) {
    return system == CodeSystem::Icd9Dx || system == CodeSystem::Icd10Dx;
}

std::string normalize_code(std::string_view raw, CodeSystem system) {
    while (!raw.empty() && is_space(raw.front())) raw.remove_prefix(1);
    while (!raw.empty() && is_space(raw.back())) raw.remove_suffix(1);

    std::string out;
    out.reserve(raw.size());
    const bool strip_dots = is_icd(system);
    for (char c : raw) {
        if (strip_dots && c == '.') continue;
        out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    if (out.empty()) {
        throw ValidationError("empty code for system " + std::string(to_string(system)));
    }
    return out;
}

CodedItem make_item(CodeSystem system, std::string_view raw) {
    return CodedItem{system, normalize_code(raw, system), {}};
}

bool is_overdose_diagnosis(const CodedItem& item) {
    const std::string_view code = item.code;
    if (item.system == CodeSystem::Icd10Dx) {
        if (code.size() < 3 || code[0] != 'T' || !std::isdigit(static_cast<unsigned char>(code[1])) ||
            !std::isdigit(static_cast<unsigned char>(code[2]))) {
            return false;
        }
        const int stem = (code[1] - '0') * 10 + (code[2] - '0');
        if (stem < 36 || stem > 50) return false;
        if (code.size() > 5 && (code[5] == '5' || code[5] == '6')) return false;
        return true;
    }
    if (item.system == CodeSystem::Icd9Dx) return has_any_prefix(code, kIcd9OverdosePrefixes);
    return false;
}

bool is_exposure_diagnosis(const CodedItem& item) {
    if (item.system == CodeSystem::Icd10Dx) return has_any_prefix(item.code, kIcd10ExposurePrefixes);
    if (item.system == CodeSystem::Icd9Dx) return has_any_prefix(item.code, kIcd9ExposurePrefixes);
    return false;
}

std::string normalize_class_name(std::string_view therapeutic_class) {
    // U+2013 and U+2014 in UTF-8.
    constexpr std::string_view en_dash = "\xE2\x80\x93";
    constexpr std::string_view em_dash = "\xE2\x80\x94";

    std::string out;
    out.reserve(therapeutic_class.size());
    bool pending_space = false;
    for (std::size_t i = 0; i < therapeutic_class.size();) {
        const auto rest = therapeutic_class.substr(i);
        if (is_space(rest.front())) {
            pending_space = !out.empty();
            ++i;
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        if (rest.starts_with(en_dash) || rest.starts_with(em_dash)) {
            out.push_back('-');
            i += en_dash.size();
            continue;
        }
        out.push_back(rest.front());
        ++i;
    }
    return out;
}

bool is_exposure_class(std::string_view therapeutic_class) {
    const auto norm = normalize_class_name(therapeutic_class);
    return norm == kOpioidClass || norm == kStimulantClass;
}

}  // namespace odx
