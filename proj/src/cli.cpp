#include "odx/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include "odx/error.hpp"
#include "odx/ingest.hpp"
#include "odx/tokens.hpp"
#include "odx/util.hpp"

namespace odx {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---- configuration -----------------------------------------------------------

namespace {

HyperGrid grid_from_json(const nlohmann::json& j, EnsembleKind kind) {
    HyperGrid g = HyperGrid::default_for(kind);
    for (const auto& [key, v] : j.items()) {
        if (key == "trees") {
            g.trees = v.get<std::vector<int>>();
        } else if (key == "max_depth") {
            g.max_depth = v.get<std::vector<int>>();
        } else if (key == "min_leaf") {
            g.min_leaf = v.get<std::vector<int>>();
        } else if (key == "learning_rate") {
            g.learning_rate = v.get<std::vector<double>>();
        } else {
            throw ValidationError("grid: unknown key '" + key + "'");
        }
    }
    return g;
}

PromptFormat parse_format(const std::string& s) {
    auto f = prompt_format_from_string(s);
    if (!f) {
        throw ValidationError("unknown format '" + s +
                              "' (expected detailed-descriptive, detailed-code, summarized-descriptive, "
                              "summarized-code)");
    }
    return *f;
}

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
    PipelineConfig c;
    try {
        if (!j.is_object()) throw ValidationError("config must be a JSON object");
        for (const auto& [key, v] : j.items()) {
            if (key == "seed") {
                c.seed = v.get<std::uint64_t>();
            } else if (key == "window_days") {
                c.window_days = v.get<int>();
            } else if (key == "allow_any_window") {
                c.allow_any_window = v.get<bool>();
            } else if (key == "max_visits") {
                c.max_visits = v.get<int>();
            } else if (key == "format") {
                c.format = parse_format(v.get<std::string>());
            } else if (key == "mask") {
                c.mask = parse_mask(v.get<std::string>());
            } else if (key == "parallelism") {
                c.parallelism = v.get<std::size_t>();
            } else if (key == "min_support") {
                c.min_support = v.get<int>();
            } else if (key == "paths") {
                for (const auto& [name, p] : v.items()) {
                    const auto path = resolve(base_dir, p.get<std::string>());
                    if (name == "data_dir") {
                        c.data_dir = path;
                    } else if (name == "output_dir") {
                        c.output_dir = path;
                    } else if (name == "dictionary") {
                        c.dictionary = path;
                    } else if (name == "templates") {
                        c.templates = path;
                    } else {
                        throw ValidationError("config: unknown path '" + name + "'");
                    }
                }
            } else if (key == "generator") {
                c.generator = GeneratorConfig::from_json(v);
            } else if (key == "grids") {
                for (const auto& [name, g] : v.items()) {
                    auto kind = ensemble_kind_from_string(name);
                    if (!kind) throw ValidationError("config: unknown ensemble '" + name + "'");
                    c.grids[*kind] = grid_from_json(g, *kind);
                }
            } else if (key == "llm") {
                auto llm = v;
                if (llm.contains("api_key")) {
                    const auto ref = llm.at("api_key").get<std::string>();
                    if (ref.size() < 4 || ref.rfind("${", 0) != 0 || ref.back() != '}') {
                        throw ValidationError("config: llm.api_key must be an environment reference like ${ODX_API_KEY}");
                    }
                    llm["api_key_env"] = ref.substr(2, ref.size() - 3);
                    llm.erase("api_key");
                }
                c.llm = LLMConfig::from_json(llm);
            } else if (key == "cost") {
                c.cost = CostModel::from_json(v);
            } else {
                throw ValidationError("config: unknown key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    if (!j.contains("generator") || !j.at("generator").contains("seed")) c.generator.seed = c.seed;
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
}

void PipelineConfig::validate() const {
    make_window(window_days, allow_any_window);
    if (max_visits < 1) throw ValidationError("max_visits must be >= 1");
    if (min_support < 1) throw ValidationError("min_support must be >= 1");
    if (!mask.any()) throw ValidationError("mask must enable at least one field");
    for (const auto& [kind, grid] : grids) grid.validate(kind);
    llm.validate();
    cost.validate();
    for (const auto* p : {&data_dir, &dictionary, &templates}) {
        if (!p->empty() && !fs::exists(*p)) throw ValidationError("path does not exist: " + p->string());
    }
}

std::size_t PipelineConfig::threads() const { return parallelism > 0 ? parallelism : default_parallelism(); }

// ---- subcommands -------------------------------------------------------------

namespace {

struct Context {
    PipelineConfig cfg;
    std::ostream& out;
};

void require(bool ok, const std::string& message) {
    if (!ok) throw ValidationError(message);
}

fs::path out_path(const Context& c, const std::string& given, const char* fallback) {
    if (!given.empty()) return given;
    return (c.cfg.output_dir.empty() ? fs::path(".") : c.cfg.output_dir) / fallback;
}

void ensure_parent(const fs::path& p) {
    const auto parent = p.parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) throw IoError("cannot create " + parent.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const ojson& j) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

CodeDictionary load_dictionary(const PipelineConfig& cfg) {
    if (!cfg.dictionary.empty()) return CodeDictionary::load(cfg.dictionary);
    return cfg.generator.pools.dictionary();
}

PromptTemplates load_templates(const PipelineConfig& cfg) {
    return cfg.templates.empty() ? PromptTemplates::defaults() : PromptTemplates::load(cfg.templates);
}

std::vector<PredictionInstance> load_instances(const std::string& path) {
    require(!path.empty(), "--instances is required");
    return read_instances(path);
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// synth ------------------------------------------------------------------------

struct SynthOpts {
    std::string out;
    std::vector<std::string> splits{"train", "valid", "test"};
    std::optional<double> signal;
    std::optional<int> n_case, n_control;
    std::optional<double> exposed_fraction;
};

void cmd_synth(Context& c, const SynthOpts& o) {
    auto gen = c.cfg.generator;
    if (o.signal) gen.signal_strength = *o.signal;
    if (o.n_case) gen.n_case = *o.n_case;
    if (o.n_control) gen.n_control = *o.n_control;
    if (o.exposed_fraction) gen.exposed_fraction = *o.exposed_fraction;
    gen.validate();
    const fs::path dir = o.out.empty() ? (c.cfg.data_dir.empty() ? fs::path("data") : c.cfg.data_dir) : fs::path(o.out);

    std::vector<Split> splits;
    for (const auto& s : o.splits) {
        auto split = split_from_string(s);
        require(split && *split != Split::Unspecified, "unknown split '" + s + "'");
        splits.push_back(*split);
    }
    std::ostringstream counts;
    std::size_t total = 0;
    for (auto split : splits) {
        const auto pop = generate_population(gen, split, c.cfg.threads());
        write_population_tables(pop, dir / std::string(to_string(split)));
        total += pop.patients.size();
        counts << (counts.tellp() > 0 ? ", " : "") << to_string(split) << ' ' << pop.patients.size();
    }
    gen.pools.dictionary().save(dir / kDictionaryFile);
    write_json(dir / "generator.json", gen.to_json());
    c.out << "synth: wrote " << total << " patients (" << counts.str() << ") to " << dir.string() << '\n';
}

// ingest -----------------------------------------------------------------------

struct IngestOpts {
    std::string data, out, rejections;
};

void cmd_ingest(Context& c, const IngestOpts& o) {
    const fs::path dir = o.data.empty() ? c.cfg.data_dir : fs::path(o.data);
    require(!dir.empty(), "--data is required");
    const auto result = parse_claims_tables(read_claims_directory(dir));
    const auto path = out_path(c, o.out, "patients.jsonl");
    ensure_parent(path);
    {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + path.string());
        for (const auto& p : result.patients) f << patient_to_json(p).dump() << '\n';
    }
    if (!o.rejections.empty()) {
        auto arr = ojson::array();
        for (const auto& r : result.report.rejections) {
            arr.push_back({{"table", r.table}, {"row", r.row}, {"reason", r.reason}});
        }
        write_json(o.rejections, arr);
    }
    const auto& r = result.report;
    c.out << "ingest: " << r.patients << " patients, " << r.encounters << " encounters, " << r.prescriptions
          << " prescriptions, " << r.rejections.size() << " rejected rows -> " << path.string() << '\n';
}

// cohort -----------------------------------------------------------------------

struct CohortOpts {
    std::string data, patients, split, out, report;
};

std::vector<PatientRecord> read_patients(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<PatientRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(patient_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void cmd_cohort(Context& c, const CohortOpts& o) {
    std::vector<PatientRecord> patients;
    Split split = Split::Unspecified;
    fs::path dir = o.data.empty() ? c.cfg.data_dir : fs::path(o.data);
    if (!o.patients.empty()) {
        patients = read_patients(o.patients);
    } else {
        require(!dir.empty(), "--data or --patients is required");
        const auto result = parse_claims_tables(read_claims_directory(dir));
        patients = result.patients;
        if (fs::exists(dir / kLabelsFile)) {
            const auto labels = read_labels(dir / kLabelsFile);
            if (!labels.empty()) split = labels.front().split;
        }
    }
    if (!o.split.empty()) {
        auto s = split_from_string(o.split);
        require(s.has_value(), "unknown split '" + o.split + "'");
        split = *s;
    }
    const auto window = make_window(c.cfg.window_days, c.cfg.allow_any_window);
    const auto ts = build_task_set(patients, window, split);
    const auto path = out_path(c, o.out, "instances.jsonl");
    ensure_parent(path);
    write_instances(path, ts.instances);
    const auto& r = ts.report;
    if (!o.report.empty()) {
        write_json(o.report, {{"window_days", window.days},
                              {"split", to_string(split)},
                              {"patients", r.patients},
                              {"ineligible", r.ineligible},
                              {"case_instances", r.case_instances},
                              {"control_instances", r.control_instances},
                              {"exposed_instances", r.exposed_instances},
                              {"dropped_case", r.dropped_case},
                              {"dropped_control", r.dropped_control}});
    }
    c.out << "cohort: " << ts.instances.size() << " instances (" << r.case_instances << " case / "
          << r.control_instances << " control, " << r.exposed_instances << " exposed) for a " << window.days
          << "-day window; " << r.ineligible << " ineligible, " << r.dropped_case << " case and " << r.dropped_control
          << " control dropped -> " << path.string() << '\n';
}

// render -----------------------------------------------------------------------

struct RenderOpts {
    std::string instances, out;
};

RenderSettings settings_of(const PipelineConfig& cfg, const CodeDictionary& dict, const PromptTemplates& templates) {
    return {cfg.format, cfg.max_visits, cfg.mask, &dict, &templates, cfg.threads()};
}

double mean_of(const std::vector<PromptDocument>& docs) {
    double s = 0;
    for (const auto& d : docs) s += static_cast<double>(d.token_estimate);
    return docs.empty() ? 0 : s / static_cast<double>(docs.size());
}

void cmd_render(Context& c, const RenderOpts& o) {
    const auto instances = load_instances(o.instances);
    const auto dict = load_dictionary(c.cfg);
    const auto templates = load_templates(c.cfg);
    const auto docs = render_all(instances, settings_of(c.cfg, dict, templates));
    const auto path = out_path(c, o.out, "prompts.jsonl");
    ensure_parent(path);
    write_prompts(path, docs);
    c.out << "render: " << docs.size() << " prompts (" << to_string(c.cfg.format) << ", max " << c.cfg.max_visits
          << " visits, mask " << to_string(c.cfg.mask) << "), mean tokens " << fmt("%.1f", mean_of(docs)) << " -> "
          << path.string() << '\n';
}

// featurize --------------------------------------------------------------------

struct FeaturizeOpts {
    std::string train, vocab, vocab_out, instances, out;
};

Vocabulary obtain_vocabulary(const Context& c, const std::string& vocab, const std::string& train,
                             const std::string& vocab_out) {
    if (!vocab.empty()) return Vocabulary::load(vocab);
    require(!train.empty(), "--vocab or --train is required");
    const auto instances = read_instances(train);
    auto v = build_vocabulary(instances, c.cfg.min_support);
    if (!vocab_out.empty()) {
        ensure_parent(vocab_out);
        v.save(vocab_out);
    }
    return v;
}

Dataset make_dataset(const std::vector<PredictionInstance>& instances, const Vocabulary& vocab, int max_visits,
                     const FieldMask& mask) {
    Dataset d;
    d.dimension = vocab.size();
    for (const auto& inst : instances) {
        d.x.push_back(vectorize(inst, vocab, max_visits, mask));
        d.y.push_back(inst.label);
    }
    return d;
}

void cmd_featurize(Context& c, const FeaturizeOpts& o) {
    const auto vocab_out = o.vocab.empty() && o.vocab_out.empty() ? out_path(c, "", "vocab.json").string() : o.vocab_out;
    const auto vocab = obtain_vocabulary(c, o.vocab, o.train, vocab_out);
    std::string tail;
    if (!o.instances.empty()) {
        const auto instances = read_instances(o.instances);
        const auto data = make_dataset(instances, vocab, c.cfg.max_visits, c.cfg.mask);
        const auto path = out_path(c, o.out, "vectors.txt");
        ensure_parent(path);
        write_vectors(path, instances, data.x);
        tail = "; " + std::to_string(data.x.size()) + " vectors -> " + path.string();
    }
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(vocab.hash()));
    c.out << "featurize: vocabulary of " << vocab.size() << " keys (min support " << vocab.min_support() << ", hash "
          << hash << ")" << (vocab_out.empty() ? "" : " -> " + vocab_out) << tail << '\n';
}

// train ------------------------------------------------------------------------

struct TrainOpts {
    std::string kind = "random-forest";
    std::string train, valid, vocab, out;
};

void cmd_train(Context& c, const TrainOpts& o) {
    auto kind = ensemble_kind_from_string(o.kind);
    require(kind.has_value(), "unknown ensemble kind '" + o.kind + "'");
    require(!o.train.empty() && !o.valid.empty(), "--train and --valid are required");
    const auto train = read_instances(o.train);
    const auto valid = read_instances(o.valid);
    const auto vocab = obtain_vocabulary(c, o.vocab, o.train, "");
    const auto dtrain = make_dataset(train, vocab, c.cfg.max_visits, c.cfg.mask);
    const auto dvalid = make_dataset(valid, vocab, c.cfg.max_visits, c.cfg.mask);
    auto model = train_ensemble(*kind, dtrain, c.cfg.grids.at(*kind), dvalid, c.cfg.seed, c.cfg.threads());
    model.vocabulary_hash = vocab.hash();
    const auto path = out_path(c, o.out, "model.json");
    ensure_parent(path);
    model.save(path);
    const auto n_points = c.cfg.grids.at(*kind).points(*kind).size();
    c.out << "train: " << to_string(*kind) << " grid point " << model.grid_index + 1 << "/" << n_points << " (trees "
          << model.params.trees << ", depth " << model.params.max_depth << ", min_leaf " << model.params.min_leaf;
    if (*kind == EnsembleKind::GradientBoosted) c.out << ", rate " << model.params.learning_rate;
    c.out << "), validation F1 " << fmt("%.2f", model.validation_f1 * 100) << " -> " << path.string() << '\n';
}

// LLM plumbing -------------------------------------------------------------------

struct BackendOpts {
    std::string backend = "mock";
    std::string mock_policy = "exposure";
};

std::unique_ptr<ChatBackend> make_backend(const PipelineConfig& cfg, const BackendOpts& o) {
    if (o.backend == "mock") {
        auto policy = mock_policy_from_string(o.mock_policy);
        require(policy.has_value(), "unknown mock policy '" + o.mock_policy +
                                        "' (expected exposure, dx-marker, constant-no, constant-yes)");
        MockChatBackend::Options opts;
        opts.policy = *policy;
        return std::make_unique<MockChatBackend>(opts);
    }
    require(o.backend == "http", "unknown backend '" + o.backend + "' (expected mock or http)");
    auto llm = cfg.llm;
    if (const char* ep = std::getenv("ODX_LLM_ENDPOINT"); ep && *ep) llm.endpoint = ep;
    return std::make_unique<HttpChatBackend>(llm);
}

// predict ------------------------------------------------------------------------

struct PredictOpts {
    std::string instances, prompts, model, vocab, out;
    BackendOpts backend;
    bool llm = false;
};

void cmd_predict(Context& c, const PredictOpts& o) {
    std::vector<PredictionOutcome> outcomes;
    if (!o.model.empty()) {
        require(!o.vocab.empty(), "--vocab is required with --model");
        const auto model = TreeEnsembleModel::load(o.model);
        const auto vocab = Vocabulary::load(o.vocab);
        require(model.vocabulary_hash == vocab.hash(), "model was trained on a different vocabulary");
        const auto instances = load_instances(o.instances);
        for (const auto& inst : instances) {
            const auto x = vectorize(inst, vocab, c.cfg.max_visits, c.cfg.mask);
            outcomes.push_back({inst.instance_id(), predict_ensemble(model, x, inst.instance_id()), "", ""});
        }
    } else {
        std::vector<PromptDocument> docs;
        if (!o.prompts.empty()) {
            docs = read_prompts(o.prompts);
        } else {
            const auto instances = load_instances(o.instances);
            const auto dict = load_dictionary(c.cfg);
            const auto templates = load_templates(c.cfg);
            docs = render_all(instances, settings_of(c.cfg, dict, templates));
        }
        auto backend = make_backend(c.cfg, o.backend);
        outcomes = llm_predict_batch(*backend, c.cfg.llm, docs);
    }
    std::size_t failed = 0, positive = 0;
    for (const auto& oc : outcomes) {
        if (!oc.prediction) {
            ++failed;
        } else if (oc.prediction->label == Label::Overdose) {
            ++positive;
        }
    }
    const auto path = out_path(c, o.out, "predictions.jsonl");
    ensure_parent(path);
    write_predictions(path, outcomes);
    c.out << "predict: " << outcomes.size() << " predictions (" << positive << " overdose, " << failed
          << " failed) -> " << path.string() << '\n';
}

// evaluate -----------------------------------------------------------------------

struct EvaluateOpts {
    std::string instances, predictions, out;
    bool exclude_failures = false;
};

void cmd_evaluate(Context& c, const EvaluateOpts& o) {
    const auto instances = load_instances(o.instances);
    require(!o.predictions.empty(), "--predictions is required");
    const auto outcomes = read_predictions(o.predictions);
    const auto policy = o.exclude_failures ? FailurePolicy::Exclude : FailurePolicy::ScoreNegative;
    const auto report = compute_metrics(outcomes, instances, policy);
    const auto path = out_path(c, o.out, "report.json");
    write_json(path, report_to_json(report));
    const SweepRow row{"all", report, 0};
    c.out << render_table(std::span(&row, 1), "Instances", false);
    auto acc = [](const std::optional<double>& v) { return v ? fmt("%.2f", *v * 100) : std::string("n/a"); };
    c.out << "No-overdose accuracy: exposed " << acc(report.subgroups.exposed) << ", non-exposed "
          << acc(report.subgroups.non_exposed) << '\n';
    c.out << "evaluate: " << report.n_instances << " instances, " << report.n_errors << " failed predictions ("
          << to_string(policy) << ") -> " << path.string() << '\n';
}

// sweep / ablate -------------------------------------------------------------------

struct SweepOpts {
    std::string instances, out;
    std::vector<int> limits{std::begin(kDefaultVisitLimits), std::end(kDefaultVisitLimits)};
    BackendOpts backend;
    bool exclude_failures = false;
};

void cmd_sweep(Context& c, const SweepOpts& o, bool ablate) {
    const auto instances = load_instances(o.instances);
    const auto dict = load_dictionary(c.cfg);
    const auto templates = load_templates(c.cfg);
    auto backend = make_backend(c.cfg, o.backend);
    const auto predictor = make_llm_predictor(*backend, c.cfg.llm);
    const auto policy = o.exclude_failures ? FailurePolicy::Exclude : FailurePolicy::ScoreNegative;
    const auto settings = settings_of(c.cfg, dict, templates);
    const auto rows = ablate ? run_field_ablation(predictor, instances, settings, policy)
                             : run_visits_sweep(predictor, instances, o.limits, settings, policy);
    const auto path = out_path(c, o.out, ablate ? "ablation.json" : "sweep.json");
    ojson j;
    j["format"] = to_string(c.cfg.format);
    if (ablate) {
        j["max_visits"] = c.cfg.max_visits;
    } else {
        j["mask"] = to_string(c.cfg.mask);
    }
    j["rows"] = rows_to_json(rows);
    write_json(path, j);
    c.out << render_table(rows, ablate ? "Fields" : "Max visits", true);
    c.out << (ablate ? "ablate: " : "sweep: ") << rows.size() << " rows -> " << path.string() << '\n';
}

// cost -----------------------------------------------------------------------------

struct CostOpts {
    std::string instances, prompts, out;
};

void cmd_cost(Context& c, const CostOpts& o) {
    std::vector<std::pair<std::string, std::vector<PromptDocument>>> sets;
    if (!o.prompts.empty()) {
        sets.emplace_back(o.prompts, read_prompts(o.prompts));
    } else {
        const auto instances = load_instances(o.instances);
        const auto dict = load_dictionary(c.cfg);
        const auto templates = load_templates(c.cfg);
        for (auto f : kAllFormats) {
            auto s = settings_of(c.cfg, dict, templates);
            s.format = f;
            sets.emplace_back(std::string(to_string(f)), render_all(instances, s));
        }
    }
    auto rows = ojson::array();
    std::size_t width = 6;
    for (const auto& [name, docs] : sets) width = std::max(width, name.size());
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s  %12s  %10s\n", static_cast<int>(width), "Format", "Mean tokens", "USD/inst");
    c.out << buf;
    for (const auto& [name, docs] : sets) {
        const double cost = estimate_cost(docs, c.cfg.cost);
        std::snprintf(buf, sizeof buf, "%-*s  %12.2f  %10s\n", static_cast<int>(width), name.c_str(), mean_of(docs),
                      format_usd(cost).c_str());
        c.out << buf;
        rows.push_back({{"format", name},
                        {"instances", docs.size()},
                        {"mean_tokens", mean_of(docs)},
                        {"cost_per_instance", cost},
                        {"cost_display", format_usd(cost)}});
    }
    const auto path = out_path(c, o.out, "cost.json");
    write_json(path, {{"cost_model", c.cfg.cost.to_json()}, {"max_visits", c.cfg.max_visits}, {"rows", rows}});
    c.out << "cost: " << sets.size() << " rows -> " << path.string() << '\n';
}

// export-finetune --------------------------------------------------------------------

struct ExportOpts {
    std::string instances, out;
};

void cmd_export(Context& c, const ExportOpts& o) {
    const auto instances = load_instances(o.instances);
    const auto dict = load_dictionary(c.cfg);
    const auto templates = load_templates(c.cfg);
    const auto path = out_path(c, o.out, "finetune.jsonl");
    ensure_parent(path);
    const auto n = export_finetune_dataset(instances, c.cfg.format, c.cfg.max_visits, c.cfg.mask, dict, templates, path);
    c.out << "export-finetune: " << n << " records (" << to_string(c.cfg.format) << ") -> " << path.string() << '\n';
}

std::string iso_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void report_error(std::ostream& err, bool as_json, const char* kind, const std::string& message, int code) {
    if (as_json) {
        err << ojson{{"error", {{"kind", kind}, {"message", message}}}, {"exit_code", code}}.dump() << '\n';
    } else {
        err << "error: " << message << '\n';
    }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Drug-overdose risk prediction pipeline over insurance claims", "odx"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, format, mask, manifest;
    std::uint64_t seed = 0;
    int window = 0, max_visits = 0;
    std::size_t parallelism = 0;
    bool json_errors = false, allow_any_window = false;
    auto* o_seed = app.add_option("--seed", seed, "Random seed");
    auto* o_window = app.add_option("--window", window, "Prediction window in days (7 or 30)");
    auto* o_visits = app.add_option("--max-visits", max_visits, "Most recent visits shown to a model");
    auto* o_format = app.add_option("--format", format, "Prompt format");
    auto* o_mask = app.add_option("--mask", mask, "History fields: any of dx,proc,rx, or all");
    auto* o_par = app.add_option("--parallelism", parallelism, "Worker threads (default: hardware threads)");
    app.add_option("--config", config_path, "JSON pipeline config");
    app.add_flag("--json-errors", json_errors, "Print errors as JSON on stderr");
    app.add_flag("--allow-any-window", allow_any_window, "Accept windows other than 7 and 30 days");
    app.add_option("--manifest", manifest, "Write a run manifest (with timestamps) to this path");

    SynthOpts synth;
    auto* s_synth = app.add_subcommand("synth", "Generate synthetic claims tables");
    s_synth->add_option("--out", synth.out, "Output directory");
    s_synth->add_option("--splits", synth.splits, "Splits to generate")->delimiter(',');
    s_synth->add_option("--signal", synth.signal, "Signal strength in [0, 1]");
    s_synth->add_option("--n-case", synth.n_case, "Case patients per split");
    s_synth->add_option("--n-control", synth.n_control, "Control patients per split");
    s_synth->add_option("--exposed-fraction", synth.exposed_fraction, "Share of exposed controls");

    IngestOpts ingest;
    auto* s_ingest = app.add_subcommand("ingest", "Parse claims tables into patient records");
    s_ingest->add_option("--data", ingest.data, "Claims directory");
    s_ingest->add_option("--out", ingest.out, "patients.jsonl path");
    s_ingest->add_option("--rejections", ingest.rejections, "Write rejected rows as JSON");

    CohortOpts cohort;
    auto* s_cohort = app.add_subcommand("cohort", "Screen, classify and align patients into instances");
    s_cohort->add_option("--data", cohort.data, "Claims directory");
    s_cohort->add_option("--patients", cohort.patients, "patients.jsonl from ingest");
    s_cohort->add_option("--split", cohort.split, "Split tag: train, valid or test");
    s_cohort->add_option("--out", cohort.out, "instances.jsonl path");
    s_cohort->add_option("--report", cohort.report, "Write the task-set summary as JSON");

    RenderOpts render;
    auto* s_render = app.add_subcommand("render", "Serialize instances as prompts");
    s_render->add_option("--instances", render.instances, "instances.jsonl");
    s_render->add_option("--out", render.out, "prompts.jsonl path");
    FeaturizeOpts featurize;
    auto* s_featurize = app.add_subcommand("featurize", "Build a vocabulary and count vectors");
    s_featurize->add_option("--train", featurize.train, "Training instances (builds the vocabulary)");
    s_featurize->add_option("--vocab", featurize.vocab, "Existing vocabulary");
    s_featurize->add_option("--vocab-out", featurize.vocab_out, "Where to save a built vocabulary");
    s_featurize->add_option("--instances", featurize.instances, "Instances to vectorize");
    s_featurize->add_option("--out", featurize.out, "vectors.txt path");

    TrainOpts train;
    auto* s_train = app.add_subcommand("train", "Grid-search a tree ensemble");
    s_train->add_option("--kind", train.kind, "random-forest or gradient-boosted");
    s_train->add_option("--train", train.train, "Training instances");
    s_train->add_option("--valid", train.valid, "Validation instances");
    s_train->add_option("--vocab", train.vocab, "Vocabulary (built from --train when omitted)");
    s_train->add_option("--out", train.out, "model.json path");

    auto add_backend = [](CLI::App* sub, BackendOpts& b) {
        sub->add_option("--backend", b.backend, "mock or http");
        sub->add_option("--mock-policy", b.mock_policy, "exposure, dx-marker, constant-no or constant-yes");
    };

    PredictOpts predict;
    auto* s_predict = app.add_subcommand("predict", "Predict with a trained ensemble or a chat model");
    s_predict->add_option("--instances", predict.instances, "instances.jsonl");
    s_predict->add_option("--prompts", predict.prompts, "prompts.jsonl (chat model)");
    s_predict->add_option("--model", predict.model, "model.json (tree ensemble)");
    s_predict->add_option("--vocab", predict.vocab, "Vocabulary used by the model");
    s_predict->add_option("--out", predict.out, "predictions.jsonl path");
    add_backend(s_predict, predict.backend);

    EvaluateOpts evaluate;
    auto* s_evaluate = app.add_subcommand("evaluate", "Score predictions against instance labels");
    s_evaluate->add_option("--instances", evaluate.instances, "instances.jsonl");
    s_evaluate->add_option("--predictions", evaluate.predictions, "predictions.jsonl");
    s_evaluate->add_option("--out", evaluate.out, "report.json path");
    s_evaluate->add_flag("--exclude-failures", evaluate.exclude_failures, "Drop failed predictions instead of scoring them negative");

    SweepOpts sweep;
    auto* s_sweep = app.add_subcommand("sweep", "Evaluate a chat model across visit limits");
    s_sweep->add_option("--instances", sweep.instances, "instances.jsonl");
    s_sweep->add_option("--limits", sweep.limits, "Visit limits")->delimiter(',');
    s_sweep->add_option("--out", sweep.out, "sweep.json path");
    s_sweep->add_flag("--exclude-failures", sweep.exclude_failures, "Drop failed predictions");
    add_backend(s_sweep, sweep.backend);

    SweepOpts ablate;
    auto* s_ablate = app.add_subcommand("ablate", "Evaluate a chat model across history-field combinations");
    s_ablate->add_option("--instances", ablate.instances, "instances.jsonl");
    s_ablate->add_option("--out", ablate.out, "ablation.json path");
    s_ablate->add_flag("--exclude-failures", ablate.exclude_failures, "Drop failed predictions");
    add_backend(s_ablate, ablate.backend);

    CostOpts cost;
    auto* s_cost = app.add_subcommand("cost", "Estimate the per-instance prompt cost");
    s_cost->add_option("--instances", cost.instances, "instances.jsonl (all four formats)");
    s_cost->add_option("--prompts", cost.prompts, "prompts.jsonl (one format)");
    s_cost->add_option("--out", cost.out, "cost.json path");

    ExportOpts exp;
    auto* s_export = app.add_subcommand("export-finetune", "Write labeled chat records for fine-tuning");
    s_export->add_option("--instances", exp.instances, "instances.jsonl");
    s_export->add_option("--out", exp.out, "finetune.jsonl path");

    std::string dictionary_path, templates_path;
    for (auto* sub : {s_render, s_predict, s_sweep, s_ablate, s_cost, s_export}) {
        sub->add_option("--dictionary", dictionary_path, "Code dictionary JSON");
        sub->add_option("--templates", templates_path, "Directory of prompt templates");
    }

    std::vector<std::string> argv_store{"odx"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());

    const auto started = iso_now();
    int code = 0;
    std::string subcommand;
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        report_error(err, json_errors, "validation", e.what(), 1);
        return 1;
    }

    try {
        PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : PipelineConfig::load(config_path);
        if (config_path.empty()) cfg.generator.seed = cfg.seed;
        if (o_seed->count()) {
            cfg.seed = seed;
            cfg.generator.seed = seed;
        }
        if (o_window->count()) cfg.window_days = window;
        if (allow_any_window) cfg.allow_any_window = true;
        if (o_visits->count()) cfg.max_visits = max_visits;
        if (o_format->count()) cfg.format = parse_format(format);
        if (o_mask->count()) cfg.mask = parse_mask(mask);
        if (o_par->count()) cfg.parallelism = parallelism;
        if (!dictionary_path.empty()) cfg.dictionary = dictionary_path;
        if (!templates_path.empty()) cfg.templates = templates_path;
        cfg.validate();

        Context ctx{cfg, out};
        auto* sub = app.get_subcommands().front();
        subcommand = sub->get_name();
        if (sub == s_synth) {
            cmd_synth(ctx, synth);
        } else if (sub == s_ingest) {
            cmd_ingest(ctx, ingest);
        } else if (sub == s_cohort) {
            cmd_cohort(ctx, cohort);
        } else if (sub == s_render) {
            cmd_render(ctx, render);
        } else if (sub == s_featurize) {
            cmd_featurize(ctx, featurize);
        } else if (sub == s_train) {
            cmd_train(ctx, train);
        } else if (sub == s_predict) {
            cmd_predict(ctx, predict);
        } else if (sub == s_evaluate) {
            cmd_evaluate(ctx, evaluate);
        } else if (sub == s_sweep) {
            cmd_sweep(ctx, sweep, false);
        } else if (sub == s_ablate) {
            cmd_sweep(ctx, ablate, true);
        } else if (sub == s_cost) {
            cmd_cost(ctx, cost);
        } else if (sub == s_export) {
            cmd_export(ctx, exp);
        }
    } catch (const ValidationError& e) {
        report_error(err, json_errors, e.kind(), e.what(), 1);
        code = 1;
    } catch (const Error& e) {
        report_error(err, json_errors, e.kind(), e.what(), 2);
        code = 2;
    } catch (const std::exception& e) {
        report_error(err, json_errors, "runtime", e.what(), 2);
        code = 2;
    }

    if (!manifest.empty()) {
        try {
            write_json(manifest, {{"subcommand", subcommand},
                                  {"arguments", args},
                                  {"started_at", started},
                                  {"finished_at", iso_now()},
                                  {"exit_code", code}});
        } catch (const Error& e) {
            report_error(err, json_errors, e.kind(), e.what(), 2);
            if (code == 0) code = 2;
        }
    }
    return code;
}

}  // namespace odx
