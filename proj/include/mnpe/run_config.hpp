#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mnpe/estimator.hpp"

namespace mnpe {

struct EvaluationConfig {
    int n_test = 500;
    int s = 1000;
    int b = 10;
    std::vector<std::int64_t> budgets;  // benchmark sweep
    std::vector<std::uint64_t> seeds;   // benchmark repetitions
};

// Everything a run needs, resolvable to a file that reproduces it: model
// name, architecture, training, evaluation, and output location. Loading
// starts from the model's defaults and overlays only the keys present;
// unknown keys anywhere in the file are rejected.
struct RunConfig {
    std::string model;
    ArchitectureConfig arch;
    TrainConfig train;
    EvaluationConfig eval;
    std::string out_dir;
};

// Per-model defaults for the benchmark architectures and training settings.
RunConfig default_run_config(const std::string& model);

RunConfig run_config_from_json_text(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Fully resolved (every key explicit); loading the output reproduces the run.
std::string run_config_to_json(const RunConfig& config);
void save_run_config(const RunConfig& config, const std::string& path);

}  // namespace mnpe
