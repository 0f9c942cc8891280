#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "steerkit/checkpoint.hpp"
#include "steerkit/rng.hpp"
#include "steerkit/tensor.hpp"

namespace steerkit::tinylm {

struct LmConfig {
    int vocab_size = 256;
    int d_model = 128;
    int n_layers = 8;
    int n_heads = 4;
    int d_ff = 512;
    int max_seq_len = 128;
    std::string positional = "learned";

    void validate() const;
};

// Additive residual-stream intervention: at layer l the residual receives
// +factor*delta at every token position, applied to the block output before
// it feeds layer l+1.
struct InterventionSpec {
    int layer = 0;
    float factor = 1.0f;
    TensorF delta;  // length d_model; may be on the autograd graph

    static InterventionSpec from_values(int layer, float factor, std::vector<float> delta);
};

struct ResidualCapture {
    int layer = 0;
    std::size_t rows = 0;
    std::size_t d_model = 0;
    std::vector<float> acts;  // rows x d_model, clean (unsteered) pass
};

struct DecodeOpts {
    enum class Mode { Greedy, Sample };
    Mode mode = Mode::Greedy;
    double temperature = 1.0;
    int max_new = 16;
    int eos_id = 1;
    std::uint64_t seed = 0;
};

// Decoder-only pre-norm transformer with causal self-attention, learned
// positions, capture hooks, and the steering injection site.
class TinyLm {
public:
    TinyLm(const LmConfig& cfg, std::uint64_t seed);

    const LmConfig& config() const { return cfg_; }

    std::vector<TensorF> parameters() const;
    NamedTensors named_tensors() const;  // shared handles, for checkpointing
    void load_tensors(const NamedTensors& tensors);

    void freeze();
    bool frozen() const { return frozen_; }
    std::uint64_t checksum() const;

    // Full-sequence logits [T x vocab]. Length errors when T exceeds
    // max_seq_len.
    TensorF forward(const std::vector<int>& tokens,
                    const InterventionSpec* iv = nullptr) const;

    // Training forward over packed lines: positions restart per line and the
    // additive attention mask is block-causal in line_of.
    TensorF forward_packed(const std::vector<int>& tokens, const std::vector<int>& positions,
                           const std::vector<int>& line_of) const;

    ResidualCapture capture_residual(const std::vector<int>& tokens, int layer) const;

    // Residual state after every block (test hook for locality/causality).
    std::vector<std::vector<float>> capture_all(const std::vector<int>& tokens,
                                                const InterventionSpec* iv = nullptr) const;

    std::vector<int> generate(const std::vector<int>& prompt, const InterventionSpec* iv,
                              const DecodeOpts& decode) const;

    // exp of mean next-token NLL over tokens[1:]; requires length >= 2.
    double perplexity(const std::vector<int>& tokens) const;

    static constexpr float kLnEps = 1e-5f;

private:
    struct Block {
        TensorF ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        TensorF ln2_g, ln2_b, w1, b1, w2, b2;
    };

    TensorF run_block(const Block& b, TensorF x, const TensorF& mask) const;
    TensorF embed(const std::vector<int>& tokens, const std::vector<int>& positions) const;

    LmConfig cfg_;
    TensorF tok_emb_, pos_emb_, lnf_g_, lnf_b_, unemb_;
    std::vector<Block> blocks_;
    bool frozen_ = false;

    friend class BlockAccess;
};

// Exposes block parameters for pretrained-from-base hypernetwork init.
class BlockAccess {
public:
    static std::vector<TensorF> block_params(const TinyLm& lm, int block);
    static TensorF token_embedding(const TinyLm& lm);
    static TensorF position_embedding(const TinyLm& lm);
};

// Additive attention masks (0 where attending is allowed, large negative
// elsewhere).
TensorF causal_mask(std::size_t t);
TensorF packed_mask(const std::vector<int>& line_of);

struct PretrainOpts {
    int steps = 3000;
    int batch_lines = 16;
    double lr = 1.5e-3;
    double lr_final_frac = 0.1;  // cosine decay floor as a fraction of lr
    int warmup = 100;
    int log_every = 100;
    int snapshot_every = 25;
    int bos_id = 0;
    int eos_id = 1;
};

struct PretrainResult {
    std::vector<float> loss_trace;
};

// Trains from scratch on corpus lines (tokens only, no BOS/EOS). Returns the
// model still unfrozen; callers freeze after checking competence. Divergence
// (NaN loss) raises TrainingError with the last snapshot restored.
TinyLm pretrain(const std::vector<std::vector<int>>& corpus, const LmConfig& cfg,
                const PretrainOpts& opts, std::uint64_t seed,
                PretrainResult* result = nullptr);

}  // namespace steerkit::tinylm
