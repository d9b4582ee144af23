#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odx/features.hpp"

namespace odx {

enum class EnsembleKind { RandomForest, GradientBoosted };

/// "random-forest", "gradient-boosted".
std::string_view to_string(EnsembleKind k);
std::optional<EnsembleKind> ensemble_kind_from_string(std::string_view s);

/// Flat binary tree. Internal nodes send x[feature] <= threshold left.
/// Leaves have feature == -1 and carry `value`: the positive fraction for a
/// forest tree, the scaled leaf weight for a boosting tree.
struct DecisionTree {
    std::vector<std::int32_t> feature;
    std::vector<double> threshold;
    std::vector<std::int32_t> left;
    std::vector<std::int32_t> right;
    std::vector<double> value;

    [[nodiscard]] std::size_t size() const { return feature.size(); }
    [[nodiscard]] double evaluate(const FeatureVector& x) const;
    friend bool operator==(const DecisionTree&, const DecisionTree&) = default;
};

struct HyperParams {
    int trees = 100;
    int max_depth = 8;
    int min_leaf = 1;
    double learning_rate = 0.1;  // boosting only
    friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

/// Candidate lists, enumerated in declared order: trees, then depth, then
/// min_leaf, then learning_rate (boosting only).
struct HyperGrid {
    std::vector<int> trees;
    std::vector<int> max_depth;
    std::vector<int> min_leaf;
    std::vector<double> learning_rate;

    static HyperGrid default_for(EnsembleKind kind);
    [[nodiscard]] std::vector<HyperParams> points(EnsembleKind kind) const;
    void validate(EnsembleKind kind) const;
};

struct TreeEnsembleModel {
    EnsembleKind kind = EnsembleKind::RandomForest;
    std::size_t dimension = 0;
    std::uint64_t vocabulary_hash = 0;
    HyperParams params;
    std::uint64_t seed = 0;
    std::size_t grid_index = 0;
    double validation_f1 = 0;
    std::vector<DecisionTree> trees;

    static constexpr int kFormatVersion = 1;

    [[nodiscard]] nlohmann::ordered_json to_json() const;
    static TreeEnsembleModel from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static TreeEnsembleModel load(const std::filesystem::path& path);
};

struct Prediction {
    std::string instance_id;
    Label label = Label::NoOverdose;
    std::optional<double> score;
    std::optional<std::string> raw_response;
    friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// A training or evaluation matrix: one sparse vector and label per instance.
struct Dataset {
    std::vector<FeatureVector> x;
    std::vector<Label> y;
    std::size_t dimension = 0;
};

/// Fits one model with fixed hyperparameters. Both learners balance the
/// classes: the forest draws each bootstrap half from each class, boosting
/// weights each class by n / (2 n_class).
TreeEnsembleModel fit_ensemble(EnsembleKind kind, const Dataset& train, const HyperParams& params,
                               std::uint64_t seed, std::size_t threads = 1);

struct GridResult {
    HyperParams params;
    double validation_f1 = 0;
};

/// Trains one model per grid point (all with `seed`) and keeps the one with
/// the highest validation F1; ties go to the earlier point. Throws
/// TrainingError when the training labels hold a single class.
TreeEnsembleModel train_ensemble(EnsembleKind kind, const Dataset& train, const HyperGrid& grid,
                                 const Dataset& valid, std::uint64_t seed, std::size_t threads = 1,
                                 std::vector<GridResult>* trace = nullptr);

/// Forest: score = positive-vote fraction. Boosting: score = sigmoid of the
/// summed leaf values. Label is overdose when score >= 0.5.
Prediction predict_ensemble(const TreeEnsembleModel& model, const FeatureVector& x, std::string instance_id = {});

}  // namespace odx
