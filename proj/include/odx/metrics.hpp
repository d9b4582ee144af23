#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "odx/cohort.hpp"

namespace odx {

/// Positive class is overdose.
struct ConfusionMatrix {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    [[nodiscard]] std::size_t total() const { return tp + fp + tn + fn; }
    void add(Label predicted, Label gold);
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(std::span<const Label> predicted, std::span<const Label> gold);

/// Ratios are nullopt when their denominator is zero.
struct Metrics {
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> specificity;
    std::optional<double> f1;
};

Metrics metrics_from(const ConfusionMatrix& cm);

/// F1 with an undefined value counted as 0; used to rank models.
double f1_or_zero(const ConfusionMatrix& cm);

}  // namespace odx
