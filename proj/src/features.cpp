#include "odx/features.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "odx/error.hpp"
#include "odx/util.hpp"

namespace odx {

namespace {

constexpr std::pair<FeatureType, std::string_view> kTypeNames[] = {
    {FeatureType::PrimaryDx, "primary-dx"},
    {FeatureType::SecondaryDx, "secondary-dx"},
    {FeatureType::Procedure, "procedure"},
    {FeatureType::DrugName, "drug-name"},
    {FeatureType::TheraClassStrengthRoute, "thera-class-strength-route"},
};

}  // namespace

std::string_view to_string(FeatureType t) {
    for (const auto& [type, name] : kTypeNames) {
        if (type == t) return name;
    }
    return "?";
}

std::optional<FeatureType> feature_type_from_string(std::string_view s) {
    for (const auto& [type, name] : kTypeNames) {
        if (name == s) return type;
    }
    return std::nullopt;
}

bool operator<(const FeatureKey& a, const FeatureKey& b) {
    if (a.type != b.type) return to_string(a.type) < to_string(b.type);
    if (a.value != b.value) return a.value < b.value;
    return a.system < b.system;
}

std::string FeatureKey::id() const {
    return std::string(to_string(type)) + ":" + std::string(odx::to_string(system)) + ":" + value;
}

FeatureKey FeatureKey::from_id(std::string_view id) {
    const auto a = id.find(':');
    const auto b = a == std::string_view::npos ? a : id.find(':', a + 1);
    if (b == std::string_view::npos) throw ValidationError("malformed feature key '" + std::string(id) + "'");
    auto type = feature_type_from_string(id.substr(0, a));
    auto sys = code_system_from_string(id.substr(a + 1, b - a - 1));
    if (!type || !sys) throw ValidationError("malformed feature key '" + std::string(id) + "'");
    return FeatureKey{*type, std::string(id.substr(b + 1)), *sys};
}

std::string class_strength_route(const Prescription& rx) {
    return rx.therapeutic_class + " | " + rx.strength + " | " + rx.route;
}

HistoryView full_history(const PredictionInstance& instance) {
    HistoryView view;
    view.encounters = instance.history.encounters;
    for (const auto& rx : instance.history.prescriptions) {
        if (rx.fill_date <= instance.cutoff_date) view.prescriptions.push_back(&rx);
    }
    return view;
}

std::vector<std::vector<FeatureKey>> visit_feature_items(const HistoryView& view, const FieldMask& mask) {
    std::vector<std::vector<FeatureKey>> visits;
    for (const auto& e : view.encounters) {
        std::vector<FeatureKey> items;
        if (mask.diagnoses) {
            for (std::size_t i = 0; i < e.diagnoses.size(); ++i) {
                const auto type = i == 0 ? FeatureType::PrimaryDx : FeatureType::SecondaryDx;
                items.push_back({type, e.diagnoses[i].code, e.diagnoses[i].system});
            }
        }
        if (mask.procedures) {
            for (const auto& p : e.procedures) items.push_back({FeatureType::Procedure, p.code, p.system});
        }
        visits.push_back(std::move(items));
    }
    if (mask.prescriptions) {
        std::optional<Date> current;
        for (const Prescription* rx : view.prescriptions) {
            if (!current || rx->fill_date != *current) {
                visits.emplace_back();
                current = rx->fill_date;
            }
            visits.back().push_back({FeatureType::DrugName, rx->drug_name, CodeSystem::NdcName});
            visits.back().push_back(
                {FeatureType::TheraClassStrengthRoute, class_strength_route(*rx), CodeSystem::TheraClass});
        }
    }
    return visits;
}

std::map<FeatureKey, long> count_feature_items(const HistoryView& view, const FieldMask& mask) {
    std::map<FeatureKey, long> counts;
    for (const auto& visit : visit_feature_items(view, mask)) {
        for (const auto& key : visit) ++counts[key];
    }
    return counts;
}

// ---- Vocabulary -------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<FeatureKey> keys, int min_support)
    : keys_(std::move(keys)), min_support_(min_support) {
    for (std::uint32_t i = 0; i < keys_.size(); ++i) {
        if (!index_.emplace(keys_[i].id(), i).second) {
            throw ValidationError("duplicate vocabulary key " + keys_[i].id());
        }
    }
}

std::optional<std::uint32_t> Vocabulary::position(const FeatureKey& key) const {
    auto it = index_.find(key.id());
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = fnv1a("odx-vocabulary");
    for (const auto& k : keys_) h = fnv1a(k.id() + "\n", h);
    return h;
}

nlohmann::ordered_json Vocabulary::to_json() const {
    nlohmann::ordered_json j;
    j["min_support"] = min_support_;
    j["size"] = keys_.size();
    auto arr = nlohmann::ordered_json::array();
    for (const auto& k : keys_) arr.push_back(k.id());
    j["keys"] = std::move(arr);
    return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    std::vector<FeatureKey> keys;
    for (const auto& k : j.at("keys")) keys.push_back(FeatureKey::from_id(k.get<std::string>()));
    return Vocabulary(std::move(keys), j.at("min_support").get<int>());
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json().dump(1) << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

std::uint64_t FeatureVector::total() const {
    std::uint64_t t = 0;
    for (const auto& [pos, count] : entries) t += count;
    return t;
}

std::uint32_t FeatureVector::at(std::uint32_t position) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), position,
                               [](const auto& e, std::uint32_t p) { return e.first < p; });
    return it != entries.end() && it->first == position ? it->second : 0;
}

Vocabulary build_vocabulary(std::span<const PredictionInstance> train_instances, int min_support) {
    if (train_instances.empty()) throw ValidationError("cannot build a vocabulary from zero instances");
    if (min_support < 1) throw ValidationError("min_support must be >= 1");

    std::map<FeatureKey, long> support;
    for (const auto& inst : train_instances) {
        if (inst.split != Split::Train) {
            throw ValidationError("vocabulary input contains non-training instance " + inst.enrol_id + " (split " +
                                  std::string(to_string(inst.split)) + ")");
        }
        for (const auto& visit : visit_feature_items(full_history(inst), FieldMask{})) {
            std::set<FeatureKey> seen(visit.begin(), visit.end());
            for (const auto& key : seen) ++support[key];
        }
    }

    std::vector<FeatureKey> keys;
    for (const auto& [key, n] : support) {
        if (n >= min_support) keys.push_back(key);
    }
    return Vocabulary(std::move(keys), min_support);
}

FeatureVector vectorize(const PredictionInstance& instance, const Vocabulary& vocab, int max_visits,
                        const FieldMask& mask) {
    FeatureVector v;
    v.dimension = vocab.size();
    for (const auto& [key, count] : count_feature_items(recent_history(instance, max_visits), mask)) {
        if (auto pos = vocab.position(key)) v.entries.emplace_back(*pos, static_cast<std::uint32_t>(count));
    }
    std::sort(v.entries.begin(), v.entries.end());
    return v;
}

void write_vectors(const std::filesystem::path& path, std::span<const PredictionInstance> instances,
                   std::span<const FeatureVector> vectors) {
    if (instances.size() != vectors.size()) throw ValidationError("instance/vector count mismatch");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (std::size_t i = 0; i < instances.size(); ++i) {
        out << instances[i].instance_id();
        for (const auto& [pos, count] : vectors[i].entries) out << ' ' << pos << ':' << count;
        out << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace odx
