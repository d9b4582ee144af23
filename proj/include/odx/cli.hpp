#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odx/ensemble.hpp"
#include "odx/eval.hpp"
#include "odx/llm.hpp"
#include "odx/synthgen.hpp"

namespace odx {

/// Settings shared by every subcommand. Precedence: built-in defaults, then
/// the --config file, then command-line flags.
struct PipelineConfig {
    std::uint64_t seed = 42;
    int window_days = 7;
    bool allow_any_window = false;
    int max_visits = 30;
    PromptFormat format = PromptFormat::DetailedDescriptive;
    FieldMask mask;
    std::size_t parallelism = 0;  // 0 = number of hardware threads
    int min_support = kDefaultMinSupport;

    std::filesystem::path data_dir;
    std::filesystem::path output_dir;
    std::filesystem::path dictionary;
    std::filesystem::path templates;

    GeneratorConfig generator;
    std::map<EnsembleKind, HyperGrid> grids{
        {EnsembleKind::RandomForest, HyperGrid::default_for(EnsembleKind::RandomForest)},
        {EnsembleKind::GradientBoosted, HyperGrid::default_for(EnsembleKind::GradientBoosted)},
    };
    LLMConfig llm;
    CostModel cost;

    /// Relative paths resolve against `base_dir`. Only "llm.api_key" may use
    /// "${VAR}" interpolation; it names the variable holding the credential.
    static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
    static PipelineConfig load(const std::filesystem::path& path);

    /// Window, visit limit, grids, nested configs and referenced paths.
    void validate() const;
    [[nodiscard]] std::size_t threads() const;
};

/// Runs one command line (without the program name). Returns the exit
/// status: 0 success, 1 validation error, 2 runtime error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace odx
