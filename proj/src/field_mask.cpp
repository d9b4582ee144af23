#include "odx/field_mask.hpp"

#include "odx/error.hpp"

namespace odx {

FieldMask parse_mask(std::string_view spec) {
    if (spec == "all") return FieldMask{};
    FieldMask m{false, false, false};
    std::size_t start = 0;
    while (start <= spec.size()) {
        auto end = spec.find(',', start);
        if (end == std::string_view::npos) end = spec.size();
        const auto tok = spec.substr(start, end - start);
        if (tok == "dx") {
            m.diagnoses = true;
        } else if (tok == "proc") {
            m.procedures = true;
        } else if (tok == "rx") {
            m.prescriptions = true;
        } else {
            throw ValidationError("unknown mask field '" + std::string(tok) + "' (expected dx, proc, rx)");
        }
        start = end + 1;
    }
    if (!m.any()) throw ValidationError("mask must enable at least one field");
    return m;
}

std::string to_string(const FieldMask& mask) {
    std::string out;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!out.empty()) out += ',';
        out += name;
    };
    add(mask.diagnoses, "dx");
    add(mask.procedures, "proc");
    add(mask.prescriptions, "rx");
    return out;
}

std::vector<FieldMask> all_nonempty_masks() {
    return {
        {true, false, false}, {false, true, false}, {false, false, true}, {true, true, false},
        {true, false, true},  {false, true, true},  {true, true, true},
    };
}

}  // namespace odx
