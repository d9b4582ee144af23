#include "odx/metrics.hpp"

#include "odx/error.hpp"

namespace odx {

void ConfusionMatrix::add(Label predicted, Label gold) {
    const bool p = predicted == Label::Overdose;
    const bool g = gold == Label::Overdose;
    if (p && g) {
        ++tp;
    } else if (p) {
        ++fp;
    } else if (g) {
        ++fn;
    } else {
        ++tn;
    }
}

ConfusionMatrix confusion(std::span<const Label> predicted, std::span<const Label> gold) {
    if (predicted.size() != gold.size()) throw ValidationError("prediction/label count mismatch");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < predicted.size(); ++i) cm.add(predicted[i], gold[i]);
    return cm;
}

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

Metrics metrics_from(const ConfusionMatrix& cm) {
    Metrics m;
    m.precision = ratio(cm.tp, cm.tp + cm.fp);
    m.recall = ratio(cm.tp, cm.tp + cm.fn);
    m.specificity = ratio(cm.tn, cm.tn + cm.fp);
    if (m.precision && m.recall && *m.precision + *m.recall > 0) {
        m.f1 = 2 * *m.precision * *m.recall / (*m.precision + *m.recall);
    }
    return m;
}

double f1_or_zero(const ConfusionMatrix& cm) { return metrics_from(cm).f1.value_or(0.0); }

}  // namespace odx
