#include "odx/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "odx/error.hpp"
#include "odx/metrics.hpp"
#include "odx/util.hpp"

namespace odx {

std::string_view to_string(EnsembleKind k) {
    return k == EnsembleKind::RandomForest ? "random-forest" : "gradient-boosted";
}

std::optional<EnsembleKind> ensemble_kind_from_string(std::string_view s) {
    if (s == "random-forest" || s == "forest" || s == "rf") return EnsembleKind::RandomForest;
    if (s == "gradient-boosted" || s == "boosting" || s == "gb") return EnsembleKind::GradientBoosted;
    return std::nullopt;
}

double DecisionTree::evaluate(const FeatureVector& x) const {
    std::int32_t node = 0;
    while (feature[node] >= 0) {
        const double v = x.at(static_cast<std::uint32_t>(feature[node]));
        node = v <= threshold[node] ? left[node] : right[node];
    }
    return value[node];
}

// ---- grids --------------------------------------------------------------------

HyperGrid HyperGrid::default_for(EnsembleKind kind) {
    if (kind == EnsembleKind::RandomForest) return {{100, 300}, {8, 16}, {1, 5}, {}};
    return {{100, 300}, {3, 6}, {1}, {0.1, 0.3}};
}

void HyperGrid::validate(EnsembleKind kind) const {
    if (trees.empty() || max_depth.empty() || min_leaf.empty()) throw ValidationError("grid lists must not be empty");
    if (kind == EnsembleKind::GradientBoosted && learning_rate.empty()) {
        throw ValidationError("boosting grid needs at least one learning rate");
    }
    for (int t : trees) {
        if (t < 1) throw ValidationError("grid: trees must be >= 1");
    }
    for (int d : max_depth) {
        if (d < 1) throw ValidationError("grid: max_depth must be >= 1");
    }
    for (int m : min_leaf) {
        if (m < 1) throw ValidationError("grid: min_leaf must be >= 1");
    }
    for (double r : learning_rate) {
        if (!(r > 0)) throw ValidationError("grid: learning_rate must be > 0");
    }
}

std::vector<HyperParams> HyperGrid::points(EnsembleKind kind) const {
    validate(kind);
    const std::vector<double> rates =
        kind == EnsembleKind::GradientBoosted ? learning_rate : std::vector<double>{HyperParams{}.learning_rate};
    std::vector<HyperParams> out;
    for (int t : trees) {
        for (int d : max_depth) {
            for (int m : min_leaf) {
                for (double r : rates) out.push_back({t, d, m, r});
            }
        }
    }
    return out;
}

// ---- tree growth ----------------------------------------------------------------

namespace {

constexpr double kLambda = 1.0;
constexpr double kMinGain = 1e-10;

// Per-sample statistics. Forest: a = positive weight, b = negative weight.
// Boosting: a = gradient, b = hessian. c is the count used for min_leaf.
struct Stat {
    double a = 0, b = 0, c = 0;
    Stat& operator+=(const Stat& o) {
        a += o.a;
        b += o.b;
        c += o.c;
        return *this;
    }
    friend Stat operator-(Stat x, const Stat& y) { return {x.a - y.a, x.b - y.b, x.c - y.c}; }
};

// Nonzero entries of each feature column, sorted by (value, sample).
struct Columns {
    std::vector<std::size_t> offset;
    std::vector<std::uint32_t> sample;
    std::vector<double> value;
};

Columns build_columns(const Dataset& data) {
    Columns cols;
    cols.offset.assign(data.dimension + 1, 0);
    for (const auto& v : data.x) {
        for (const auto& [pos, count] : v.entries) ++cols.offset[pos + 1];
    }
    std::partial_sum(cols.offset.begin(), cols.offset.end(), cols.offset.begin());
    cols.sample.resize(cols.offset.back());
    cols.value.resize(cols.offset.back());
    std::vector<std::size_t> cursor(cols.offset.begin(), cols.offset.end() - 1);
    for (std::uint32_t i = 0; i < data.x.size(); ++i) {
        for (const auto& [pos, count] : data.x[i].entries) {
            const auto k = cursor[pos]++;
            cols.sample[k] = i;
            cols.value[k] = count;
        }
    }
    std::vector<std::pair<double, std::uint32_t>> buf;
    for (std::size_t f = 0; f < data.dimension; ++f) {
        buf.clear();
        for (auto k = cols.offset[f]; k < cols.offset[f + 1]; ++k) buf.emplace_back(cols.value[k], cols.sample[k]);
        std::sort(buf.begin(), buf.end());
        for (std::size_t j = 0; j < buf.size(); ++j) {
            cols.value[cols.offset[f] + j] = buf[j].first;
            cols.sample[cols.offset[f] + j] = buf[j].second;
        }
    }
    return cols;
}

class TreeGrower {
public:
    TreeGrower(EnsembleKind kind, const Dataset& data, const Columns& cols, const HyperParams& params)
        : kind_(kind), data_(data), cols_(cols), params_(params) {}

    /// Grows one tree over samples with nonzero count. `node_of` receives the
    /// final leaf of every included sample (-1 for excluded ones).
    DecisionTree grow(const std::vector<Stat>& stats, std::vector<std::int32_t>& node_of, Rng* feature_rng) {
        const std::size_t n = stats.size();
        const std::size_t d = data_.dimension;
        DecisionTree tree;
        std::vector<Stat> totals;
        auto new_node = [&](const Stat& s) {
            tree.feature.push_back(-1);
            tree.threshold.push_back(0);
            tree.left.push_back(-1);
            tree.right.push_back(-1);
            tree.value.push_back(0);
            totals.push_back(s);
            return static_cast<std::int32_t>(tree.feature.size() - 1);
        };

        Stat root;
        node_of.assign(n, -1);
        for (std::size_t i = 0; i < n; ++i) {
            if (stats[i].c > 0) {
                node_of[i] = 0;
                root += stats[i];
            }
        }
        new_node(root);

        const std::size_t mtry =
            feature_rng ? std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(d)))) : d;
        std::vector<std::int32_t> active{0};
        std::vector<std::int32_t> slot_of;
        std::vector<std::uint32_t> perm(d);

        for (int depth = 0; depth < params_.max_depth && !active.empty() && d > 0; ++depth) {
            std::vector<std::int32_t> open;
            for (auto node : active) {
                if (splittable(totals[node])) open.push_back(node);
            }
            if (open.empty()) break;
            slot_of.assign(tree.feature.size(), -1);
            for (std::size_t k = 0; k < open.size(); ++k) slot_of[open[k]] = static_cast<std::int32_t>(k);

            std::vector<char> allowed;
            if (feature_rng) {
                allowed.assign(open.size() * d, 0);
                for (std::size_t k = 0; k < open.size(); ++k) {
                    std::iota(perm.begin(), perm.end(), 0U);
                    for (std::size_t j = 0; j < mtry; ++j) {
                        const auto r = j + static_cast<std::size_t>(feature_rng->between(0, static_cast<long>(d - j - 1)));
                        std::swap(perm[j], perm[r]);
                        allowed[k * d + perm[j]] = 1;
                    }
                }
            }

            struct Best {
                double gain = kMinGain;
                std::int32_t feature = -1;
                double threshold = 0;
            };
            std::vector<Best> best(open.size());
            std::vector<Stat> nz(open.size()), left(open.size());
            std::vector<double> last(open.size());
            std::vector<char> has_last(open.size()), touched(open.size());
            std::vector<std::size_t> touched_list;

            for (std::size_t f = 0; f < d; ++f) {
                const auto begin = cols_.offset[f], end = cols_.offset[f + 1];
                if (begin == end) continue;
                touched_list.clear();
                for (auto k = begin; k < end; ++k) {
                    const auto node = node_of[cols_.sample[k]];
                    if (node < 0) continue;
                    const auto slot = slot_of[node];
                    if (slot < 0 || (feature_rng && !allowed[slot * d + f])) continue;
                    if (!touched[slot]) {
                        touched[slot] = 1;
                        touched_list.push_back(slot);
                        nz[slot] = Stat{};
                    }
                    nz[slot] += stats[cols_.sample[k]];
                }
                for (auto slot : touched_list) {
                    left[slot] = totals[open[slot]] - nz[slot];
                    has_last[slot] = left[slot].c > 0.5;
                    last[slot] = 0;
                }
                for (auto k = begin; k < end; ++k) {
                    const auto node = node_of[cols_.sample[k]];
                    if (node < 0) continue;
                    const auto slot = slot_of[node];
                    if (slot < 0 || !touched[slot]) continue;
                    const double v = cols_.value[k];
                    if (has_last[slot] && v > last[slot]) {
                        const Stat& parent = totals[open[slot]];
                        const Stat right = parent - left[slot];
                        if (left[slot].c >= params_.min_leaf && right.c >= params_.min_leaf) {
                            const double gain = objective(left[slot]) + objective(right) - objective(parent);
                            if (gain > best[slot].gain) {
                                best[slot] = {gain, static_cast<std::int32_t>(f), (last[slot] + v) / 2};
                            }
                        }
                    }
                    left[slot] += stats[cols_.sample[k]];
                    last[slot] = v;
                    has_last[slot] = 1;
                }
                for (auto slot : touched_list) touched[slot] = 0;
            }

            std::vector<std::int32_t> next;
            std::vector<std::int32_t> child_base(open.size(), -1);
            for (std::size_t k = 0; k < open.size(); ++k) {
                if (best[k].feature < 0) continue;
                const auto node = open[k];
                tree.feature[node] = best[k].feature;
                tree.threshold[node] = best[k].threshold;
                const auto l = new_node(Stat{});
                const auto r = new_node(Stat{});
                tree.left[node] = l;
                tree.right[node] = r;
                child_base[k] = l;
                next.push_back(l);
                next.push_back(r);
            }
            for (std::size_t i = 0; i < n; ++i) {
                const auto node = node_of[i];
                if (node < 0 || node >= static_cast<std::int32_t>(slot_of.size())) continue;
                const auto slot = slot_of[node];
                if (slot < 0 || child_base[slot] < 0) continue;
                const double v = data_.x[i].at(static_cast<std::uint32_t>(tree.feature[node]));
                const auto child = v <= tree.threshold[node] ? tree.left[node] : tree.right[node];
                node_of[i] = child;
                totals[child] += stats[i];
            }
            active = std::move(next);
        }

        for (std::size_t k = 0; k < tree.feature.size(); ++k) {
            if (tree.feature[k] < 0) tree.value[k] = leaf_value(totals[k]);
        }
        return tree;
    }

private:
    [[nodiscard]] bool splittable(const Stat& s) const {
        if (s.c < 2.0 * params_.min_leaf) return false;
        if (kind_ == EnsembleKind::RandomForest) return s.a > 0 && s.b > 0;
        return true;
    }

    [[nodiscard]] double objective(const Stat& s) const {
        if (kind_ == EnsembleKind::RandomForest) return s.c > 0 ? (s.a * s.a + s.b * s.b) / s.c : 0.0;
        return s.a * s.a / (s.b + kLambda);
    }

    [[nodiscard]] double leaf_value(const Stat& s) const {
        if (kind_ == EnsembleKind::RandomForest) return s.a + s.b > 0 ? s.a / (s.a + s.b) : 0.0;
        return -s.a / (s.b + kLambda) * params_.learning_rate;
    }

    EnsembleKind kind_;
    const Dataset& data_;
    const Columns& cols_;
    const HyperParams& params_;
};

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_dataset(const Dataset& data, const char* name) {
    if (data.x.size() != data.y.size()) throw ValidationError(std::string(name) + ": vector/label count mismatch");
    for (const auto& v : data.x) {
        if (v.dimension != data.dimension) {
            throw ValidationError(std::string(name) + ": vector dimension " + std::to_string(v.dimension) +
                                  " does not match " + std::to_string(data.dimension));
        }
    }
}

TreeEnsembleModel fit_with_columns(EnsembleKind kind, const Dataset& train, const Columns& cols,
                                   const HyperParams& params, std::uint64_t seed, std::size_t threads) {
    const std::size_t n = train.x.size();
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) (train.y[i] == Label::Overdose ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty()) throw TrainingError("training labels contain a single class");

    TreeEnsembleModel model;
    model.kind = kind;
    model.dimension = train.dimension;
    model.params = params;
    model.seed = seed;
    model.trees.resize(static_cast<std::size_t>(params.trees));
    TreeGrower grower(kind, train, cols, params);

    if (kind == EnsembleKind::RandomForest) {
        parallel_for(model.trees.size(), threads, [&](std::size_t t) {
            Rng rng(derive_seed(seed, 0xF0, t));
            std::vector<Stat> stats(n);
            const std::size_t half = n / 2;
            for (std::size_t k = 0; k < n; ++k) {
                const auto& pool = k < half ? pos : neg;
                const auto i = pool[static_cast<std::size_t>(rng.between(0, static_cast<long>(pool.size()) - 1))];
                (train.y[i] == Label::Overdose ? stats[i].a : stats[i].b) += 1;
                stats[i].c += 1;
            }
            std::vector<std::int32_t> node_of;
            model.trees[t] = grower.grow(stats, node_of, &rng);
        });
    } else {
        const double w_pos = static_cast<double>(n) / (2.0 * static_cast<double>(pos.size()));
        const double w_neg = static_cast<double>(n) / (2.0 * static_cast<double>(neg.size()));
        std::vector<double> margin(n, 0.0);
        std::vector<Stat> stats(n);
        std::vector<std::int32_t> node_of;
        for (auto& tree : model.trees) {
            for (std::size_t i = 0; i < n; ++i) {
                const bool y = train.y[i] == Label::Overdose;
                const double w = y ? w_pos : w_neg;
                const double p = sigmoid(margin[i]);
                stats[i] = {w * (p - (y ? 1.0 : 0.0)), w * p * (1.0 - p), 1.0};
            }
            tree = grower.grow(stats, node_of, nullptr);
            for (std::size_t i = 0; i < n; ++i) margin[i] += tree.value[static_cast<std::size_t>(node_of[i])];
        }
    }
    return model;
}

}  // namespace

TreeEnsembleModel fit_ensemble(EnsembleKind kind, const Dataset& train, const HyperParams& params,
                               std::uint64_t seed, std::size_t threads) {
    check_dataset(train, "train");
    const auto cols = build_columns(train);
    return fit_with_columns(kind, train, cols, params, seed, threads);
}

TreeEnsembleModel train_ensemble(EnsembleKind kind, const Dataset& train, const HyperGrid& grid,
                                 const Dataset& valid, std::uint64_t seed, std::size_t threads,
                                 std::vector<GridResult>* trace) {
    check_dataset(train, "train");
    check_dataset(valid, "valid");
    if (train.dimension != valid.dimension) throw ValidationError("train and valid dimensions differ");
    if (valid.x.empty()) throw ValidationError("validation set is empty");
    const auto points = grid.points(kind);
    const auto cols = build_columns(train);

    std::vector<double> f1(points.size());
    std::vector<TreeEnsembleModel> models(points.size());
    auto fit_point = [&](std::size_t g, std::size_t inner_threads) {
        auto m = fit_with_columns(kind, train, cols, points[g], seed, inner_threads);
        ConfusionMatrix cm;
        for (std::size_t i = 0; i < valid.x.size(); ++i) cm.add(predict_ensemble(m, valid.x[i]).label, valid.y[i]);
        f1[g] = f1_or_zero(cm);
        m.grid_index = g;
        m.validation_f1 = f1[g];
        models[g] = std::move(m);
    };
    if (kind == EnsembleKind::GradientBoosted) {
        parallel_for(points.size(), threads, [&](std::size_t g) { fit_point(g, 1); });
    } else {
        for (std::size_t g = 0; g < points.size(); ++g) fit_point(g, threads);
    }

    std::size_t chosen = 0;
    for (std::size_t g = 1; g < points.size(); ++g) {
        if (f1[g] > f1[chosen]) chosen = g;
    }
    if (trace) {
        trace->clear();
        for (std::size_t g = 0; g < points.size(); ++g) trace->push_back({points[g], f1[g]});
    }
    return std::move(models[chosen]);
}

Prediction predict_ensemble(const TreeEnsembleModel& model, const FeatureVector& x, std::string instance_id) {
    if (x.dimension != model.dimension) {
        throw ValidationError("vector dimension " + std::to_string(x.dimension) + " does not match model dimension " +
                              std::to_string(model.dimension));
    }
    if (model.trees.empty()) throw ValidationError("model has no trees");
    Prediction p;
    p.instance_id = std::move(instance_id);
    if (model.kind == EnsembleKind::RandomForest) {
        std::size_t votes = 0;
        for (const auto& t : model.trees) votes += t.evaluate(x) >= 0.5 ? 1 : 0;
        p.score = static_cast<double>(votes) / static_cast<double>(model.trees.size());
    } else {
        double z = 0;
        for (const auto& t : model.trees) z += t.evaluate(x);
        p.score = sigmoid(z);
    }
    p.label = *p.score >= 0.5 ? Label::Overdose : Label::NoOverdose;
    return p;
}

// ---- persistence ---------------------------------------------------------------

nlohmann::ordered_json TreeEnsembleModel::to_json() const {
    nlohmann::ordered_json j;
    j["format"] = "odx-tree-ensemble";
    j["version"] = kFormatVersion;
    j["kind"] = to_string(kind);
    j["dimension"] = dimension;
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(vocabulary_hash));
    j["vocabulary_hash"] = hash;
    j["seed"] = seed;
    j["grid_index"] = grid_index;
    j["validation_f1"] = validation_f1;
    j["hyperparameters"] = {{"trees", params.trees},
                            {"max_depth", params.max_depth},
                            {"min_leaf", params.min_leaf},
                            {"learning_rate", params.learning_rate}};
    auto arr = nlohmann::ordered_json::array();
    for (const auto& t : trees) {
        arr.push_back({{"feature", t.feature},
                       {"threshold", t.threshold},
                       {"left", t.left},
                       {"right", t.right},
                       {"value", t.value}});
    }
    j["trees"] = std::move(arr);
    return j;
}

TreeEnsembleModel TreeEnsembleModel::from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "odx-tree-ensemble") throw ValidationError("not a tree-ensemble model file");
    if (j.at("version").get<int>() != kFormatVersion) {
        throw ValidationError("unsupported model version " + j.at("version").dump());
    }
    TreeEnsembleModel m;
    auto kind = ensemble_kind_from_string(j.at("kind").get<std::string>());
    if (!kind) throw ValidationError("unknown ensemble kind " + j.at("kind").dump());
    m.kind = *kind;
    m.dimension = j.at("dimension").get<std::size_t>();
    m.vocabulary_hash = std::stoull(j.at("vocabulary_hash").get<std::string>(), nullptr, 16);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.grid_index = j.at("grid_index").get<std::size_t>();
    m.validation_f1 = j.at("validation_f1").get<double>();
    const auto& h = j.at("hyperparameters");
    m.params = {h.at("trees").get<int>(), h.at("max_depth").get<int>(), h.at("min_leaf").get<int>(),
                h.at("learning_rate").get<double>()};
    for (const auto& t : j.at("trees")) {
        DecisionTree tree;
        t.at("feature").get_to(tree.feature);
        t.at("threshold").get_to(tree.threshold);
        t.at("left").get_to(tree.left);
        t.at("right").get_to(tree.right);
        t.at("value").get_to(tree.value);
        const auto n = tree.feature.size();
        if (n == 0 || tree.threshold.size() != n || tree.left.size() != n || tree.right.size() != n ||
            tree.value.size() != n) {
            throw ValidationError("malformed tree in model file");
        }
        for (std::size_t k = 0; k < n; ++k) {
            if (tree.feature[k] < 0) continue;
            const auto l = tree.left[k], r = tree.right[k];
            if (static_cast<std::size_t>(tree.feature[k]) >= m.dimension || l <= static_cast<std::int32_t>(k) ||
                r <= static_cast<std::int32_t>(k) || l >= static_cast<std::int32_t>(n) ||
                r >= static_cast<std::int32_t>(n)) {
                throw ValidationError("tree node references an invalid feature or child");
            }
        }
        m.trees.push_back(std::move(tree));
    }
    if (m.trees.empty()) throw ValidationError("model file has no trees");
    return m;
}

void TreeEnsembleModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json().dump() << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

TreeEnsembleModel TreeEnsembleModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

}  // namespace odx
