#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace odx {

/// Which history components a prompt or feature vector may use.
struct FieldMask {
    bool diagnoses = true;
    bool procedures = true;
    bool prescriptions = true;

    [[nodiscard]] bool any() const { return diagnoses || procedures || prescriptions; }
    friend bool operator==(const FieldMask&, const FieldMask&) = default;
};

/// Parses "dx,proc,rx" (any non-empty subset; "all" is accepted too).
/// Throws ValidationError.
FieldMask parse_mask(std::string_view spec);
std::string to_string(const FieldMask& mask);

/// The seven non-empty masks in the order dx, proc, rx, dx+proc, dx+rx, proc+rx, all.
std::vector<FieldMask> all_nonempty_masks();

}  // namespace odx
