#pragma once

#include <cstdint>
#include <vector>

#include "steerkit/conceptlab.hpp"
#include "steerkit/hypernet.hpp"
#include "steerkit/tinylm.hpp"

namespace steerkit::baselines {

using hypernet::SteeringVector;

// Supervised dictionary-learning baseline: one trained direction per concept
// with a top-k sequence-level detection latent.
struct ReftR1Params {
    std::vector<float> w;  // unit-norm direction after training
    double lambda = 0.05;
    int k = 8;
};

// ReLU(h . w)
double reft_latent(const std::vector<float>& h, const std::vector<float>& w);

// Detection latents over the rows of a residual capture.
std::vector<double> reft_latents(const tinylm::ResidualCapture& acts,
                                 const std::vector<float>& w);

struct ReftTrainOpts {
    double lr = 5e-2;
    int epochs = 8;
    int batch = 8;
    double lambda = 0.05;
    int k = 8;
    int intervention_layer = 4;
    double alpha_train = 1.0;
    std::uint64_t seed = 0;
};

struct ReftTrainResult {
    std::vector<float> loss_trace;
    std::uint64_t total_flops = 0;
    std::vector<std::uint64_t> step_flops;
};

// Joint objective: steered LM loss plus lambda * sum of the non-top-k
// detection latents. Returns a unit-normalized direction.
ReftR1Params reft_train(const std::vector<conceptlab::SteeringTask>& concept_data,
                        const tinylm::TinyLm& base, const ReftTrainOpts& opts,
                        ReftTrainResult* result = nullptr);

// Objective value at a fixed direction (no training): mean over tasks of the
// steered label cross-entropy plus the sparsity term. lambda = 0 reduces it
// to the plain LM loss.
double reft_objective(const tinylm::TinyLm& base,
                      const std::vector<conceptlab::SteeringTask>& tasks,
                      const std::vector<float>& w, double lambda, int k, int layer,
                      double alpha);

// Test-time vector: magnitude is the mean of the top-k latents over the
// prompt positions, direction w. k larger than the position count clamps.
SteeringVector reft_steer_vector(const tinylm::ResidualCapture& prompt_acts,
                                 const ReftR1Params& params);

// mean(pos) - mean(neg)
SteeringVector diffmean(const std::vector<std::vector<float>>& pos_acts,
                        const std::vector<std::vector<float>>& neg_acts);

// Mean-pooled residual activations of [BOS] x [SEP] y at the given layer,
// pooled over the answer positions; feeds diffmean.
std::vector<float> pooled_activation(const tinylm::TinyLm& base, const std::vector<int>& x,
                                     const std::vector<int>& y, int layer);

// Fixed instruction template prepended to the base prompt; evaluated with no
// intervention.
std::vector<int> prompt_steer(const std::vector<int>& s, const std::vector<int>& x,
                              int max_seq_len);

}  // namespace steerkit::baselines
