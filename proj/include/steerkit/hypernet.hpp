#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "steerkit/checkpoint.hpp"
#include "steerkit/conceptlab.hpp"
#include "steerkit/tensor.hpp"
#include "steerkit/tinylm.hpp"

namespace steerkit::hypernet {

enum class Variant { NoContext, InContext, CrossAttention };
enum class InitScheme { Random, PretrainedFromBase };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);
std::string init_name(InitScheme s);
InitScheme init_from_name(const std::string& name);

struct HypernetConfig {
    Variant variant = Variant::CrossAttention;
    int vocab_size = 256;
    int n_blocks = 4;
    int n_heads = 4;
    int n_cross_heads = 4;
    int d_model = 128;
    int d_ff = 512;
    int max_seq_len = 128;
    bool unit_norm_output = false;  // only the non-input-conditioned variant
    InitScheme init = InitScheme::PretrainedFromBase;

    void validate() const;
};

struct SteeringVector {
    std::vector<float> values;
    bool normalized = false;
    std::string provenance;
};

struct AttentionDump {
    struct Mat {
        int block = 0;
        int head = 0;
        std::string kind;  // "self" | "cross"
        std::size_t rows = 0, cols = 0;
        std::vector<float> w;  // row-major attention probabilities
    };
    std::vector<Mat> mats;
};

// Multi-head attention over explicit query/key-value streams. Queries come
// from q_in, keys and values from kv_in; mask (additive) may be undefined.
// Records per-head probabilities into dump when given.
TensorF multihead_attention(const TensorF& q_in, const TensorF& kv_in, const TensorF& wq,
                            const TensorF& bq, const TensorF& wk, const TensorF& bk,
                            const TensorF& wv, const TensorF& bv, const TensorF& wo,
                            const TensorF& bo, int n_heads, const TensorF& mask,
                            AttentionDump* dump = nullptr, int block = 0,
                            const char* kind = "self");

// Transformer hypernetwork: encodes the steering prompt with causal
// self-attention, optionally appends the base prompt or cross-attends into
// the base LM's residual stream, and maps the last-layer last-token state
// through a two-layer MLP head to a steering vector.
class Hypernet {
public:
    // base supplies pretrained-from-base initialization (required when
    // config.init == PretrainedFromBase).
    Hypernet(const HypernetConfig& cfg, std::uint64_t seed,
             const tinylm::TinyLm* base = nullptr);

    const HypernetConfig& config() const { return cfg_; }
    std::vector<TensorF> parameters() const;
    NamedTensors named_tensors() const;
    void load_tensors(const NamedTensors& tensors);

    // Graph-tensor output; inputs required per variant (x for InContext,
    // base_acts for CrossAttention).
    TensorF steering_vector_t(const std::vector<int>& s, const std::vector<int>* x,
                              const tinylm::ResidualCapture* base_acts,
                              AttentionDump* dump = nullptr) const;

    SteeringVector generate_vector(const std::vector<int>& s, const std::vector<int>* x,
                                   const tinylm::ResidualCapture* base_acts) const;

    struct Encoding {
        std::vector<std::vector<float>> layer_states;  // per block, T x d
        std::vector<float> last_state;                 // h^T_L after final norm
        std::size_t t = 0, d = 0;
    };
    // Prompt-only encoding: self-attention and feed-forward sublayers (plus
    // cross-attention when base_acts is given).
    Encoding encode_steering_prompt(const std::vector<int>& s,
                                    const tinylm::ResidualCapture* base_acts = nullptr) const;

    // One decoder block applied to an arbitrary stream (unit-test surface for
    // the cross-attention contract).
    TensorF block_forward(int block, const TensorF& x_prev,
                          const tinylm::ResidualCapture* base_acts,
                          AttentionDump* dump = nullptr) const;

    // Steering head on an arbitrary d_model state; skip_norm exposes the
    // pre-normalization output.
    TensorF head_forward(const TensorF& h_last, bool skip_norm = false) const;

private:
    struct Block {
        TensorF ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;  // self attention
        TensorF lnc_g, lnc_b, cq_w, cq_b, ck_w, ck_b, cv_w, cv_b, co_w, co_b;  // cross
        TensorF ln2_g, ln2_b, w1, b1, w2, b2;  // feed-forward
    };

    TensorF encode_stream(const std::vector<int>& tokens,
                          const tinylm::ResidualCapture* base_acts,
                          AttentionDump* dump) const;

    HypernetConfig cfg_;
    TensorF tok_emb_, pos_emb_, lnf_g_, lnf_b_;
    TensorF head_w1_, head_b1_, head_w2_, head_b2_;
    std::vector<Block> blocks_;
};

struct TrainOpts {
    double base_lr = 2e-4;
    bool depth_lr_rule = true;  // lr(n) = base_lr * sqrt(20 / n)
    int epochs = 3;
    int batch = 8;
    double alpha_train = 1.0;
    std::uint64_t seed = 0;
    int intervention_layer = 4;
    int max_steps = -1;  // optional cap; -1 lets epochs decide
    // Early-stop support for the compute study: stop once the eval loss on
    // eval_set reaches target_eval_loss (checked every eval_every steps).
    const std::vector<conceptlab::SteeringTask>* eval_set = nullptr;
    int eval_every = 0;
    double target_eval_loss = -1.0;
};

struct TrainResult {
    std::vector<float> loss_trace;
    std::vector<std::uint64_t> step_flops;
    std::vector<std::pair<int, double>> eval_trace;  // (step, eval loss)
    int steps = 0;
    int steps_to_target = -1;
    double final_eval_loss = -1.0;
    double mean_cosine = -2.0;  // reconstruction only
    std::uint64_t total_flops = 0;
};

double effective_lr(const TrainOpts& opts, int n_blocks);

// End-to-end trainer: emit a vector, steer the frozen base LM, cross-entropy
// against the gold steered output on label positions only, update
// hypernetwork parameters only.
TrainResult train_e2e(Hypernet& h, const tinylm::TinyLm& base,
                      const std::vector<conceptlab::SteeringTask>& data,
                      const TrainOpts& opts);

// Teacher-forced evaluation loss of the steered pass (mean over tasks).
double e2e_eval_loss(const Hypernet& h, const tinylm::TinyLm& base,
                     const std::vector<conceptlab::SteeringTask>& tasks, int layer,
                     double alpha);

// Reconstruction trainer for the non-input-conditioned variant:
// L = 1 - CosSim(v, v*) + ||v - v*||^2.
TrainResult train_reconstruction(Hypernet& h,
                                 const std::vector<std::pair<std::vector<int>,
                                                             std::vector<float>>>& pairs,
                                 const TrainOpts& opts);

// Loss value of the reconstruction objective for one pair (unit-test surface).
double reconstruction_loss(const std::vector<float>& v, const std::vector<float>& v_star);

}  // namespace steerkit::hypernet
