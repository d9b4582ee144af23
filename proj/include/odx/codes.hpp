#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace odx {

enum class CodeSystem { Icd9Dx, Icd10Dx, Icd9Pcs, Cpt, TheraClass, NdcName };

/// Stable wire names: "ICD9-DX", "ICD10-DX", "ICD9-PCS", "CPT", "THERA-CLASS", "NDC-NAME".
std::string_view to_string(CodeSystem system);
std::optional<CodeSystem> code_system_from_string(std::string_view name);

bool is_icd(CodeSystem system);
bool is_diagnosis_system(CodeSystem system);

struct CodedItem {
    CodeSystem system = CodeSystem::Icd10Dx;
    std::string code;
    std::string description;

    friend bool operator==(const CodedItem&, const CodedItem&) = default;
};

/// Trims, uppercases, and strips dots from ICD codes. Throws ValidationError
/// when nothing is left. Idempotent.
std::string normalize_code(std::string_view raw, CodeSystem system);

/// Builds a CodedItem with a normalized code.
CodedItem make_item(CodeSystem system, std::string_view raw);

/// Drug poisoning per the case-cohort rule.
///
/// ICD-10: stem T36..T50, excluding adverse effect ('5') and underdosing ('6')
/// in the intent position, which is index 5 of the dotless code (T40.2X5A ->
/// "T402X5A", intent '5'). Codes too short to carry an intent character are
/// included. ICD-9: prefix 965, 968, 969, 970, E850, E853, E854 or E858.
/// Any non-diagnosis system yields false.
bool is_overdose_diagnosis(const CodedItem& item);

/// Opioid or stimulant use disorder: ICD-10 F11/F14/F15, ICD-9 304.0/304.2/
/// 304.4/304.7/305.5-305.8.
bool is_exposure_diagnosis(const CodedItem& item);

/// Collapses internal whitespace, trims, and maps en/em dashes to '-'.
std::string normalize_class_name(std::string_view therapeutic_class);

/// True for the two exposure therapeutic classes (opioid analgesics and
/// ADHD/anti-narcolepsy/anti-obesity/anorexiant agents).
bool is_exposure_class(std::string_view therapeutic_class);

}  // namespace odx
