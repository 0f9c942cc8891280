#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "steerkit/hypernet.hpp"
#include "steerkit/tinylm.hpp"

namespace steerkit::config {

struct PretrainCfg {
    int steps = 2600;
    int batch_lines = 16;
    double lr = 1.5e-3;
    int warmup = 100;
    int corpus_lines = 20000;
    std::uint64_t corpus_seed = 7;
};

struct TrainCfg {
    double base_lr = 2e-4;
    bool depth_lr_rule = true;
    int epochs = 3;
    int batch = 8;
    double alpha_train = 1.0;
};

struct BaselineCfg {
    double lambda = 0.05;
    int k = 8;
    double lr = 5e-2;
    int epochs = 8;
    int batch = 8;
};

struct DataCfg {
    int n_concepts = 32;
    int train_per_concept = 72;
    int eval_per_concept = 10;
    double heldout_fraction = 0.2;
    std::uint64_t seed = 11;
};

struct EvalCfg {
    std::string method = "hypernet";  // hypernet | reft | diffmean | prompt
    std::string split = "held-in";    // held-in | held-out
    std::string decode = "greedy";    // greedy | sample
    double temperature = 1.0;
    int max_new = 16;
    std::vector<double> factor_grid = {0.0, 0.5, 1.0, 2.0, 4.0, 8.0};
};

struct SweepCfg {
    std::vector<int> sizes = {2, 8, 32};
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    bool flops_mode = false;
    std::vector<int> flops_sizes = {4, 16, 64};
    int flops_eval_concepts = 4;
    double target_margin = 1.05;
    int eval_every = 25;
    int max_steps = 2000;
};

struct AblateCfg {
    std::vector<int> depths = {2, 4, 8, 20};
    std::vector<std::string> inits = {"random", "pretrained"};
    int epochs = 1;
    int n_concepts = 8;
    std::vector<std::uint64_t> seeds = {0, 1, 2};
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    int intervention_layer = 4;  // mid-depth of the 8-layer base
    tinylm::LmConfig model;
    hypernet::HypernetConfig hypernet_cfg;
    PretrainCfg pretrain;
    TrainCfg train;
    BaselineCfg baseline;
    DataCfg data;
    EvalCfg eval;
    SweepCfg sweep;
    AblateCfg ablate;

    void validate() const;
};

// Strict parse: unknown keys are rejected by name, omitted keys take the
// documented defaults, and parse(serialize(cfg)) round-trips losslessly.
ExperimentConfig parse_config(const std::string& text);
std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig load_config_file(const std::string& path);

}  // namespace steerkit::config
