#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "odx/cohort.hpp"
#include "odx/field_mask.hpp"

namespace odx {

enum class FeatureType { PrimaryDx, SecondaryDx, Procedure, DrugName, TheraClassStrengthRoute };

/// "primary-dx", "secondary-dx", "procedure", "drug-name", "thera-class-strength-route".
std::string_view to_string(FeatureType t);
std::optional<FeatureType> feature_type_from_string(std::string_view s);

/// One countable history item. `system` is meaningful for diagnosis and
/// procedure keys only. Keys order lexicographically by (type name, value).
struct FeatureKey {
    FeatureType type = FeatureType::PrimaryDx;
    std::string value;
    CodeSystem system = CodeSystem::Icd10Dx;

    friend bool operator==(const FeatureKey&, const FeatureKey&) = default;
    friend bool operator<(const FeatureKey& a, const FeatureKey& b);

    /// "<type>:<system>:<value>"; unique and stable, used for persistence.
    [[nodiscard]] std::string id() const;
    static FeatureKey from_id(std::string_view id);
};

/// Composite key value for the class/strength/route drug feature.
std::string class_strength_route(const Prescription& rx);

/// The full history of an instance (all encounters, all fills up to the cutoff).
HistoryView full_history(const PredictionInstance& instance);

/// Feature occurrences grouped by visit. Each encounter is one visit; fills
/// sharing a fill date form one pharmacy visit. The first diagnosis of an
/// encounter is its primary diagnosis.
std::vector<std::vector<FeatureKey>> visit_feature_items(const HistoryView& view, const FieldMask& mask);

/// Occurrence counts of every item in `view`, keyed and ordered by FeatureKey.
std::map<FeatureKey, long> count_feature_items(const HistoryView& view, const FieldMask& mask);

class Vocabulary {
public:
    Vocabulary() = default;
    Vocabulary(std::vector<FeatureKey> keys, int min_support);

    [[nodiscard]] std::size_t size() const { return keys_.size(); }
    [[nodiscard]] const std::vector<FeatureKey>& keys() const { return keys_; }
    [[nodiscard]] int min_support() const { return min_support_; }
    [[nodiscard]] std::optional<std::uint32_t> position(const FeatureKey& key) const;

    /// FNV-1a over the ordered key ids; embedded in model files.
    [[nodiscard]] std::uint64_t hash() const;

    [[nodiscard]] nlohmann::ordered_json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

private:
    std::vector<FeatureKey> keys_;
    std::unordered_map<std::string, std::uint32_t> index_;
    int min_support_ = 0;
};

struct FeatureVector {
    std::size_t dimension = 0;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> entries;  // (position, count), sorted by position

    [[nodiscard]] std::uint64_t total() const;
    [[nodiscard]] std::uint32_t at(std::uint32_t position) const;
    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

inline constexpr int kDefaultMinSupport = 50;

/// Keeps every item present in at least `min_support` distinct training
/// visits. Throws ValidationError on an empty input or on any instance not
/// tagged as training data.
Vocabulary build_vocabulary(std::span<const PredictionInstance> train_instances,
                            int min_support = kDefaultMinSupport);

/// Occurrence counts over the last `max_visits` visits (and fills in that
/// span), restricted to vocabulary items.
FeatureVector vectorize(const PredictionInstance& instance, const Vocabulary& vocab, int max_visits,
                        const FieldMask& mask = {});

/// Sparse lines: "<instance_id> <pos>:<count> ...".
void write_vectors(const std::filesystem::path& path, std::span<const PredictionInstance> instances,
                   std::span<const FeatureVector> vectors);

}  // namespace odx
