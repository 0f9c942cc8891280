#pragma once

#include <map>
#include <string>
#include <vector>

#include "steerkit/baselines.hpp"
#include "steerkit/config.hpp"
#include "steerkit/conceptlab.hpp"
#include "steerkit/evalkit.hpp"
#include "steerkit/hypernet.hpp"
#include "steerkit/tinylm.hpp"

namespace steerkit::orchestrate {

using config::ExperimentConfig;

// ---- manifest and report files (UTF-8, one JSON object per line) ----
void write_manifest(const std::string& path,
                    const std::vector<conceptlab::SteeringTask>& tasks);
std::vector<conceptlab::SteeringTask> read_manifest(const std::string& path);
void write_concept_registry(const std::string& path,
                            const std::vector<conceptlab::ConceptSpec>& held_in,
                            const std::vector<conceptlab::ConceptSpec>& held_out);
void write_report(const evalkit::EvalReport& report, const std::string& dir,
                  const std::string& stem);

// ---- pipeline pieces (shared with the acceptance suite) ----
tinylm::TinyLm build_base(const ExperimentConfig& cfg,
                          tinylm::PretrainResult* trace = nullptr);

// Greedy exact-match rate of the frozen unsteered LM on unseen prompts.
double exact_match_rate(const tinylm::TinyLm& lm, int n_prompts, std::uint64_t seed);

struct SplitConcepts {
    std::vector<conceptlab::ConceptSpec> held_in;
    std::vector<conceptlab::ConceptSpec> held_out;
};
SplitConcepts concept_split(const ExperimentConfig& cfg);

evalkit::EvalOpts eval_opts(const ExperimentConfig& cfg);

evalkit::MethodSpec hypernet_method(const hypernet::Hypernet& h, const tinylm::TinyLm& lm,
                                    int layer);
evalkit::MethodSpec reft_method(const std::map<int, baselines::ReftR1Params>& params,
                                const tinylm::TinyLm& lm, int layer);
evalkit::MethodSpec diffmean_method(const std::map<int, std::vector<float>>& vectors);
evalkit::MethodSpec prompt_method();

struct VectorStore {
    std::map<int, baselines::ReftR1Params> reft;
    std::map<int, std::vector<float>> diffmean;
};
NamedTensors store_to_tensors(const VectorStore& store);
VectorStore store_from_tensors(const NamedTensors& tensors);

VectorStore train_baselines(const ExperimentConfig& cfg, const tinylm::TinyLm& lm,
                            const std::vector<conceptlab::SteeringTask>& train_tasks);

// ---- commands ----
void cmd_pretrain(const ExperimentConfig& cfg);
void cmd_gen_data(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_train_baseline(const ExperimentConfig& cfg);
void cmd_eval(const ExperimentConfig& cfg);
void cmd_scale_sweep(const ExperimentConfig& cfg);
void cmd_ablate(const ExperimentConfig& cfg);
void cmd_analyze(const ExperimentConfig& cfg);

const std::vector<std::string>& command_names();
// Dispatch; throws LookupError for unknown commands.
void run_command(const std::string& command, const ExperimentConfig& cfg);

}  // namespace steerkit::orchestrate
