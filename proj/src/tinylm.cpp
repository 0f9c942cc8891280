#include "steerkit/tinylm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "steerkit/errors.hpp"
#include "steerkit/optim.hpp"

namespace steerkit::tinylm {

void LmConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("LmConfig: vocab_size must be >= 2");
    if (d_model < 1 || n_layers < 1 || d_ff < 1 || max_seq_len < 2)
        throw ConfigError("LmConfig: dimensions must be positive");
    if (n_heads < 1 || d_model % n_heads != 0)
        throw ConfigError("LmConfig: d_model must be divisible by n_heads");
    if (positional != "learned")
        throw ConfigError("LmConfig: unknown positional scheme: " + positional);
}

InterventionSpec InterventionSpec::from_values(int layer, float factor,
                                               std::vector<float> delta) {
    InterventionSpec iv;
    iv.layer = layer;
    iv.factor = factor;
    std::size_t n = delta.size();
    iv.delta = TensorF::from(std::move(delta), {n});
    return iv;
}

namespace {

TensorF init_weight(Rng& rng, std::size_t r, std::size_t c, double std_dev) {
    std::vector<float> w(r * c);
    for (auto& v : w) v = static_cast<float>(rng.next_normal() * std_dev);
    return TensorF::from(std::move(w), {r, c}, true);
}

TensorF init_vec(std::size_t n, float fill, bool requires_grad = true) {
    return TensorF::full({n}, fill, requires_grad);
}

void check_intervention(const LmConfig& cfg, const InterventionSpec& iv) {
    if (iv.layer < 0 || iv.layer >= cfg.n_layers)
        throw IndexError("intervention: layer out of range");
    if (!iv.delta.defined() || iv.delta.numel() != static_cast<std::size_t>(cfg.d_model))
        throw ShapeError("intervention: delta length must equal d_model");
}

}  // namespace

TinyLm::TinyLm(const LmConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng(seed).split("tinylm");
    auto d = static_cast<std::size_t>(cfg_.d_model);
    auto v = static_cast<std::size_t>(cfg_.vocab_size);
    auto ff = static_cast<std::size_t>(cfg_.d_ff);
    double res_scale = 1.0 / std::sqrt(2.0 * cfg_.n_layers);

    tok_emb_ = init_weight(rng, v, d, 0.02);
    pos_emb_ = init_weight(rng, static_cast<std::size_t>(cfg_.max_seq_len), d, 0.02);
    lnf_g_ = init_vec(d, 1.0f);
    lnf_b_ = init_vec(d, 0.0f);
    unemb_ = init_weight(rng, d, v, 0.02);
    blocks_.resize(cfg_.n_layers);
    for (int l = 0; l < cfg_.n_layers; ++l) {
        Block& b = blocks_[l];
        Rng br = rng.split(static_cast<std::uint64_t>(l));
        b.ln1_g = init_vec(d, 1.0f);
        b.ln1_b = init_vec(d, 0.0f);
        b.wq = init_weight(br, d, d, 0.02);
        b.bq = init_vec(d, 0.0f);
        b.wk = init_weight(br, d, d, 0.02);
        b.bk = init_vec(d, 0.0f);
        b.wv = init_weight(br, d, d, 0.02);
        b.bv = init_vec(d, 0.0f);
        b.wo = init_weight(br, d, d, 0.02 * res_scale);
        b.bo = init_vec(d, 0.0f);
        b.ln2_g = init_vec(d, 1.0f);
        b.ln2_b = init_vec(d, 0.0f);
        b.w1 = init_weight(br, d, ff, 0.02);
        b.b1 = init_vec(ff, 0.0f);
        b.w2 = init_weight(br, ff, d, 0.02 * res_scale);
        b.b2 = init_vec(d, 0.0f);
    }
}

std::vector<TensorF> TinyLm::parameters() const {
    std::vector<TensorF> ps{tok_emb_, pos_emb_, lnf_g_, lnf_b_, unemb_};
    for (const Block& b : blocks_) {
        for (const TensorF& t : {b.ln1_g, b.ln1_b, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo,
                                 b.bo, b.ln2_g, b.ln2_b, b.w1, b.b1, b.w2, b.b2})
            ps.push_back(t);
    }
    return ps;
}

NamedTensors TinyLm::named_tensors() const {
    NamedTensors nt;
    nt.entries.emplace("lm.tok_emb", tok_emb_);
    nt.entries.emplace("lm.pos_emb", pos_emb_);
    nt.entries.emplace("lm.lnf_g", lnf_g_);
    nt.entries.emplace("lm.lnf_b", lnf_b_);
    nt.entries.emplace("lm.unemb", unemb_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const Block& b = blocks_[l];
        std::string p = "lm.block" + std::to_string(l) + ".";
        nt.entries.emplace(p + "ln1_g", b.ln1_g);
        nt.entries.emplace(p + "ln1_b", b.ln1_b);
        nt.entries.emplace(p + "wq", b.wq);
        nt.entries.emplace(p + "bq", b.bq);
        nt.entries.emplace(p + "wk", b.wk);
        nt.entries.emplace(p + "bk", b.bk);
        nt.entries.emplace(p + "wv", b.wv);
        nt.entries.emplace(p + "bv", b.bv);
        nt.entries.emplace(p + "wo", b.wo);
        nt.entries.emplace(p + "bo", b.bo);
        nt.entries.emplace(p + "ln2_g", b.ln2_g);
        nt.entries.emplace(p + "ln2_b", b.ln2_b);
        nt.entries.emplace(p + "w1", b.w1);
        nt.entries.emplace(p + "b1", b.b1);
        nt.entries.emplace(p + "w2", b.w2);
        nt.entries.emplace(p + "b2", b.b2);
    }
    return nt;
}

void TinyLm::load_tensors(const NamedTensors& tensors) {
    auto own = named_tensors();
    for (auto& [name, dst] : own.entries) {
        auto it = tensors.entries.find(name);
        if (it == tensors.entries.end())
            throw DataError("TinyLm::load_tensors: missing tensor " + name);
        if (it->second.shape() != dst.shape())
            throw ShapeError("TinyLm::load_tensors: shape mismatch for " + name);
        // dst shares the model's node; overwrite in place.
        dst.value() = it->second.value();
    }
}

void TinyLm::freeze() {
    for (auto& p : parameters()) {
        auto node = p.node_;
        node->requires_grad = false;
    }
    frozen_ = true;
}

std::uint64_t TinyLm::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto nt = named_tensors();
    for (const auto& [name, t] : nt.entries) {
        for (unsigned char c : name) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        const auto& v = t.value();
        const auto* bytes = reinterpret_cast<const std::uint8_t*>(v.data());
        for (std::size_t i = 0; i < v.size() * sizeof(float); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

TensorF causal_mask(std::size_t t) {
    std::vector<float> m(t * t, 0.0f);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = i + 1; j < t; ++j) m[i * t + j] = -1e9f;
    return TensorF::from(std::move(m), {t, t});
}

TensorF packed_mask(const std::vector<int>& line_of) {
    std::size_t t = line_of.size();
    std::vector<float> m(t * t, -1e9f);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j <= i; ++j)
            if (line_of[i] == line_of[j]) m[i * t + j] = 0.0f;
    return TensorF::from(std::move(m), {t, t});
}

TensorF TinyLm::embed(const std::vector<int>& tokens, const std::vector<int>& positions) const {
    for (int p : positions)
        if (p < 0 || p >= cfg_.max_seq_len)
            throw LengthError("TinyLm: position exceeds max_seq_len");
    return add(embedding_lookup(tok_emb_, tokens), embedding_lookup(pos_emb_, positions));
}

TensorF TinyLm::run_block(const Block& b, TensorF x, const TensorF& mask) const {
    auto d = static_cast<std::size_t>(cfg_.d_model);
    std::size_t dh = d / static_cast<std::size_t>(cfg_.n_heads);

    TensorF xn = layer_norm(x, b.ln1_g, b.ln1_b, kLnEps);
    TensorF q = add_rowvec(matmul(xn, b.wq), b.bq);
    TensorF k = add_rowvec(matmul(xn, b.wk), b.bk);
    TensorF v = add_rowvec(matmul(xn, b.wv), b.bv);

    float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
    std::vector<TensorF> heads;
    heads.reserve(cfg_.n_heads);
    for (int h = 0; h < cfg_.n_heads; ++h) {
        std::size_t c0 = h * dh, c1 = c0 + dh;
        TensorF qh = slice_cols(q, c0, c1);
        TensorF kh = slice_cols(k, c0, c1);
        TensorF vh = slice_cols(v, c0, c1);
        TensorF scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt), mask);
        TensorF probs = softmax(scores, 1);
        heads.push_back(matmul(probs, vh));
    }
    TensorF ctx = concat_cols(std::span<const TensorF>(heads));
    x = add(x, add_rowvec(matmul(ctx, b.wo), b.bo));

    TensorF xm = layer_norm(x, b.ln2_g, b.ln2_b, kLnEps);
    TensorF h1 = gelu(add_rowvec(matmul(xm, b.w1), b.b1));
    x = add(x, add_rowvec(matmul(h1, b.w2), b.b2));
    return x;
}

namespace {

// Per-forward injected vector, factor folded in. Returns an undefined tensor
// when the injection is an exact no-op on a constant delta, so the forward
// stays bit-identical to the unintervened pass.
TensorF injected_vector(const InterventionSpec& iv) {
    TensorF sv = scale(iv.delta, iv.factor);
    if (!sv.on_graph()) {
        bool all_zero = true;
        for (float x : sv.value())
            if (x != 0.0f) {
                all_zero = false;
                break;
            }
        if (all_zero) return TensorF{};
    }
    return sv;
}

}  // namespace

TensorF TinyLm::forward(const std::vector<int>& tokens, const InterventionSpec* iv) const {
    if (tokens.empty()) throw LengthError("TinyLm::forward: empty sequence");
    if (tokens.size() > static_cast<std::size_t>(cfg_.max_seq_len))
        throw LengthError("TinyLm::forward: sequence exceeds max_seq_len");
    if (iv) check_intervention(cfg_, *iv);

    std::vector<int> positions(tokens.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    TensorF x = embed(tokens, positions);
    TensorF mask = causal_mask(tokens.size());
    TensorF inj;
    if (iv) inj = injected_vector(*iv);
    for (int l = 0; l < cfg_.n_layers; ++l) {
        x = run_block(blocks_[l], x, mask);
        if (iv && iv->layer == l && inj.defined()) x = add_rowvec(x, inj);
    }
    x = layer_norm(x, lnf_g_, lnf_b_, kLnEps);
    return matmul(x, unemb_);
}

TensorF TinyLm::forward_packed(const std::vector<int>& tokens,
                               const std::vector<int>& positions,
                               const std::vector<int>& line_of) const {
    if (tokens.empty()) throw LengthError("TinyLm::forward_packed: empty sequence");
    if (tokens.size() != positions.size() || tokens.size() != line_of.size())
        throw ShapeError("TinyLm::forward_packed: length mismatch");
    if (tokens.size() > static_cast<std::size_t>(cfg_.max_seq_len))
        throw LengthError("TinyLm::forward_packed: sequence exceeds max_seq_len");
    TensorF x = embed(tokens, positions);
    TensorF mask = packed_mask(line_of);
    for (int l = 0; l < cfg_.n_layers; ++l) x = run_block(blocks_[l], x, mask);
    x = layer_norm(x, lnf_g_, lnf_b_, kLnEps);
    return matmul(x, unemb_);
}

ResidualCapture TinyLm::capture_residual(const std::vector<int>& tokens, int layer) const {
    if (layer < 0 || layer >= cfg_.n_layers)
        throw IndexError("capture_residual: layer out of range");
    TapeF::Pause pause;
    if (tokens.empty()) throw LengthError("capture_residual: empty sequence");
    if (tokens.size() > static_cast<std::size_t>(cfg_.max_seq_len))
        throw LengthError("capture_residual: sequence exceeds max_seq_len");
    std::vector<int> positions(tokens.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    TensorF x = embed(tokens, positions);
    TensorF mask = causal_mask(tokens.size());
    for (int l = 0; l <= layer; ++l) x = run_block(blocks_[l], x, mask);
    ResidualCapture cap;
    cap.layer = layer;
    cap.rows = tokens.size();
    cap.d_model = static_cast<std::size_t>(cfg_.d_model);
    cap.acts = x.value();
    return cap;
}

std::vector<std::vector<float>> TinyLm::capture_all(const std::vector<int>& tokens,
                                                    const InterventionSpec* iv) const {
    TapeF::Pause pause;
    if (iv) check_intervention(cfg_, *iv);
    std::vector<int> positions(tokens.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    TensorF x = embed(tokens, positions);
    TensorF mask = causal_mask(tokens.size());
    TensorF inj;
    if (iv) inj = injected_vector(*iv);
    std::vector<std::vector<float>> caps;
    for (int l = 0; l < cfg_.n_layers; ++l) {
        x = run_block(blocks_[l], x, mask);
        if (iv && iv->layer == l && inj.defined()) x = add_rowvec(x, inj);
        caps.push_back(x.value());
    }
    return caps;
}

std::vector<int> TinyLm::generate(const std::vector<int>& prompt, const InterventionSpec* iv,
                                  const DecodeOpts& decode) const {
    if (prompt.empty()) throw LengthError("generate: prompt must be nonempty");
    TapeF::Pause pause;
    Rng rng = Rng(decode.seed).split("decode");
    std::vector<int> seq = prompt;
    std::vector<int> out;
    for (int step = 0; step < decode.max_new; ++step) {
        if (seq.size() >= static_cast<std::size_t>(cfg_.max_seq_len)) break;
        TensorF logits = forward(seq, iv);
        std::size_t vcount = logits.cols();
        const float* row = logits.value().data() + (logits.rows() - 1) * vcount;
        int next = 0;
        if (decode.mode == DecodeOpts::Mode::Greedy) {
            for (std::size_t j = 1; j < vcount; ++j)
                if (row[j] > row[next]) next = static_cast<int>(j);
        } else {
            if (decode.temperature <= 0.0)
                throw ConfigError("generate: temperature must be positive for sampling");
            double mx = row[0];
            for (std::size_t j = 1; j < vcount; ++j) mx = std::max(mx, static_cast<double>(row[j]));
            std::vector<double> p(vcount);
            double s = 0.0;
            for (std::size_t j = 0; j < vcount; ++j) {
                p[j] = std::exp((row[j] - mx) / decode.temperature);
                s += p[j];
            }
            double u = rng.next_double() * s, acc = 0.0;
            next = static_cast<int>(vcount) - 1;
            for (std::size_t j = 0; j < vcount; ++j) {
                acc += p[j];
                if (u < acc) {
                    next = static_cast<int>(j);
                    break;
                }
            }
        }
        if (next == decode.eos_id) break;
        out.push_back(next);
        seq.push_back(next);
    }
    return out;
}

double TinyLm::perplexity(const std::vector<int>& tokens) const {
    if (tokens.size() < 2) throw LengthError("perplexity: need at least 2 tokens");
    TapeF::Pause pause;
    TensorF logits = forward(tokens, nullptr);
    std::size_t v = logits.cols();
    double nll = 0.0;
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
        const float* row = logits.value().data() + i * v;
        double mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double s = 0.0;
        for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
        nll += std::log(s) + mx - row[tokens[i + 1]];
    }
    return std::exp(nll / static_cast<double>(tokens.size() - 1));
}

std::vector<TensorF> BlockAccess::block_params(const TinyLm& lm, int block) {
    if (block < 0 || block >= lm.cfg_.n_layers)
        throw IndexError("block_params: block out of range");
    const TinyLm::Block& b = lm.blocks_[block];
    return {b.ln1_g, b.ln1_b, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv,
            b.wo,    b.bo,    b.ln2_g, b.ln2_b, b.w1, b.b1, b.w2, b.b2};
}

TensorF BlockAccess::token_embedding(const TinyLm& lm) { return lm.tok_emb_; }
TensorF BlockAccess::position_embedding(const TinyLm& lm) { return lm.pos_emb_; }

// ---- pretraining ----

namespace {

struct Pack {
    std::vector<int> tokens, positions, line_of, targets;
    std::vector<std::uint8_t> mask;
    std::size_t active = 0;
};

void append_line(Pack& pack, const std::vector<int>& line, int line_idx, int bos_id,
                 int eos_id) {
    std::size_t start = pack.tokens.size();
    pack.tokens.push_back(bos_id);
    pack.tokens.insert(pack.tokens.end(), line.begin(), line.end());
    pack.tokens.push_back(eos_id);
    for (std::size_t i = start; i < pack.tokens.size(); ++i) {
        pack.positions.push_back(static_cast<int>(i - start));
        pack.line_of.push_back(line_idx);
    }
}

void finalize_pack(Pack& pack) {
    std::size_t t = pack.tokens.size();
    pack.targets.assign(t, 0);
    pack.mask.assign(t, 0);
    for (std::size_t i = 0; i + 1 < t; ++i) {
        if (pack.line_of[i] == pack.line_of[i + 1]) {
            pack.targets[i] = pack.tokens[i + 1];
            pack.mask[i] = 1;
            ++pack.active;
        }
    }
}

}  // namespace

TinyLm pretrain(const std::vector<std::vector<int>>& corpus, const LmConfig& cfg,
                const PretrainOpts& opts, std::uint64_t seed, PretrainResult* result) {
    if (corpus.empty()) throw DataError("pretrain: empty corpus");
    for (const auto& line : corpus) {
        if (line.size() + 2 > static_cast<std::size_t>(cfg.max_seq_len))
            throw LengthError("pretrain: corpus line exceeds max_seq_len");
        for (int t : line)
            if (t < 0 || t >= cfg.vocab_size)
                throw IndexError("pretrain: corpus token outside vocab");
    }

    TinyLm model(cfg, seed);
    if (opts.steps == 0) return model;

    Adam opt(model.parameters(), {.lr = opts.lr});
    Rng order = Rng(seed).split("pretrain-order");
    std::vector<std::size_t> perm(corpus.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::size_t cursor = perm.size();  // trigger shuffle on first use

    std::vector<std::vector<float>> snapshot;
    auto take_snapshot = [&] {
        snapshot.clear();
        for (const auto& p : opt.params()) snapshot.push_back(p.value());
    };
    auto restore_snapshot = [&] {
        std::vector<TensorF> params = opt.params();
        for (std::size_t i = 0; i < params.size(); ++i) params[i].value() = snapshot[i];
    };
    take_snapshot();

    for (int step = 1; step <= opts.steps; ++step) {
        std::vector<Pack> packs;
        packs.emplace_back();
        int line_counter = 0;
        for (int bline = 0; bline < opts.batch_lines; ++bline) {
            if (cursor >= perm.size()) {
                order.shuffle(perm.begin(), perm.end());
                cursor = 0;
            }
            const auto& line = corpus[perm[cursor++]];
            if (packs.back().tokens.size() + line.size() + 2 >
                static_cast<std::size_t>(cfg.max_seq_len))
                packs.emplace_back();
            append_line(packs.back(), line, line_counter++, opts.bos_id, opts.eos_id);
        }
        std::size_t total_active = 0;
        for (auto& p : packs) {
            finalize_pack(p);
            total_active += p.active;
        }

        TapeF tape;
        TensorF loss;
        bool blew_up = false;
        try {
            TapeF::Scope scope(tape);
            for (auto& p : packs) {
                if (p.active == 0) continue;
                TensorF logits = model.forward_packed(p.tokens, p.positions, p.line_of);
                TensorF ce = cross_entropy(logits, p.targets, p.mask);
                TensorF weighted = scale(
                    ce, static_cast<float>(static_cast<double>(p.active) / total_active));
                loss = loss.defined() ? add(loss, weighted) : weighted;
            }
        } catch (const NumericError&) {
            blew_up = true;
        }
        if (blew_up || !std::isfinite(loss.defined() ? loss.item() : 0.0f)) {
            restore_snapshot();
            throw DivergenceError(
                "pretrain: loss diverged (NaN/Inf); last checkpoint retained",
                model.named_tensors());
        }
        float loss_v = loss.item();
        if (result) result->loss_trace.push_back(loss_v);

        tape.backward(loss);
        double warm = opts.warmup > 0 ? std::min(1.0, static_cast<double>(step) / opts.warmup)
                                      : 1.0;
        double progress = opts.steps > opts.warmup
                              ? std::max(0.0, static_cast<double>(step - opts.warmup)) /
                                    static_cast<double>(opts.steps - opts.warmup)
                              : 0.0;
        double floor = std::clamp(opts.lr_final_frac, 0.0, 1.0);
        double decay = floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
        opt.set_lr(opts.lr * warm * decay);
        opt.step();
        opt.zero_grad();
        tape.clear();

        if (opts.snapshot_every > 0 && step % opts.snapshot_every == 0) take_snapshot();
    }
    return model;
}

}  // namespace steerkit::tinylm
