#include "steerkit/hypernet.hpp"

#include <algorithm>
#include <cmath>

#include "steerkit/errors.hpp"
#include "steerkit/optim.hpp"

namespace steerkit::hypernet {

using tinylm::ResidualCapture;
using tinylm::TinyLm;

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::NoContext: return "no_context";
        case Variant::InContext: return "in_context";
        case Variant::CrossAttention: return "cross_attention";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    if (name == "no_context") return Variant::NoContext;
    if (name == "in_context") return Variant::InContext;
    if (name == "cross_attention") return Variant::CrossAttention;
    throw ConfigError("unknown hypernet variant: " + name);
}

std::string init_name(InitScheme s) {
    return s == InitScheme::Random ? "random" : "pretrained";
}

InitScheme init_from_name(const std::string& name) {
    if (name == "random") return InitScheme::Random;
    if (name == "pretrained") return InitScheme::PretrainedFromBase;
    throw ConfigError("unknown init scheme: " + name);
}

void HypernetConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("HypernetConfig: vocab_size must be >= 2");
    if (n_blocks < 1) throw ConfigError("HypernetConfig: n_blocks must be >= 1");
    if (d_model < 1 || d_ff < 1 || max_seq_len < 2)
        throw ConfigError("HypernetConfig: dimensions must be positive");
    if (n_heads < 1 || d_model % n_heads != 0)
        throw ConfigError("HypernetConfig: d_model must be divisible by n_heads");
    if (variant == Variant::CrossAttention) {
        if (n_cross_heads < 1 || d_model % n_cross_heads != 0)
            throw ConfigError("HypernetConfig: cross attention needs valid n_cross_heads");
    }
    if (unit_norm_output && variant != Variant::NoContext)
        throw ConfigError(
            "HypernetConfig: unit-norm output applies only to the non-input-conditioned "
            "variant");
}

namespace {

TensorF rand_weight(Rng& rng, std::size_t r, std::size_t c, double std_dev) {
    std::vector<float> w(r * c);
    for (auto& v : w) v = static_cast<float>(rng.next_normal() * std_dev);
    return TensorF::from(std::move(w), {r, c}, true);
}

TensorF const_vec(std::size_t n, float fill) { return TensorF::full({n}, fill, true); }

TensorF clone_param(const TensorF& src) {
    return TensorF::from(src.value(), src.shape(), true);
}

constexpr float kLnEps = tinylm::TinyLm::kLnEps;

}  // namespace

Hypernet::Hypernet(const HypernetConfig& cfg, std::uint64_t seed, const TinyLm* base)
    : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.init == InitScheme::PretrainedFromBase) {
        if (!base)
            throw ArgumentError("Hypernet: pretrained-from-base init requires the base LM");
        if (base->config().d_model != cfg_.d_model)
            throw ShapeError("Hypernet: base d_model mismatch");
    }
    Rng rng = Rng(seed).split("hypernet");
    auto d = static_cast<std::size_t>(cfg_.d_model);
    auto ff = static_cast<std::size_t>(cfg_.d_ff);
    double res_scale = 1.0 / std::sqrt(2.0 * cfg_.n_blocks);

    int base_blocks = base ? base->config().n_layers : 0;
    bool from_base = cfg_.init == InitScheme::PretrainedFromBase;

    if (from_base) {
        tok_emb_ = clone_param(tinylm::BlockAccess::token_embedding(*base));
        pos_emb_ = clone_param(tinylm::BlockAccess::position_embedding(*base));
    } else {
        tok_emb_ = rand_weight(rng, static_cast<std::size_t>(cfg_.vocab_size), d, 0.02);
        pos_emb_ = rand_weight(rng, static_cast<std::size_t>(cfg_.max_seq_len), d, 0.02);
    }
    lnf_g_ = const_vec(d, 1.0f);
    lnf_b_ = const_vec(d, 0.0f);

    blocks_.resize(cfg_.n_blocks);
    for (int p = 0; p < cfg_.n_blocks; ++p) {
        Block& b = blocks_[p];
        Rng br = rng.split(static_cast<std::uint64_t>(p));
        if (from_base && p < base_blocks) {
            auto src = tinylm::BlockAccess::block_params(*base, p);
            b.ln1_g = clone_param(src[0]);
            b.ln1_b = clone_param(src[1]);
            b.wq = clone_param(src[2]);
            b.bq = clone_param(src[3]);
            b.wk = clone_param(src[4]);
            b.bk = clone_param(src[5]);
            b.wv = clone_param(src[6]);
            b.bv = clone_param(src[7]);
            b.wo = clone_param(src[8]);
            b.bo = clone_param(src[9]);
            b.ln2_g = clone_param(src[10]);
            b.ln2_b = clone_param(src[11]);
            b.w1 = clone_param(src[12]);
            b.b1 = clone_param(src[13]);
            b.w2 = clone_param(src[14]);
            b.b2 = clone_param(src[15]);
        } else {
            b.ln1_g = const_vec(d, 1.0f);
            b.ln1_b = const_vec(d, 0.0f);
            b.wq = rand_weight(br, d, d, 0.02);
            b.bq = const_vec(d, 0.0f);
            b.wk = rand_weight(br, d, d, 0.02);
            b.bk = const_vec(d, 0.0f);
            b.wv = rand_weight(br, d, d, 0.02);
            b.bv = const_vec(d, 0.0f);
            b.wo = rand_weight(br, d, d, 0.02 * res_scale);
            b.bo = const_vec(d, 0.0f);
            b.ln2_g = const_vec(d, 1.0f);
            b.ln2_b = const_vec(d, 0.0f);
            b.w1 = rand_weight(br, d, ff, 0.02);
            b.b1 = const_vec(ff, 0.0f);
            b.w2 = rand_weight(br, ff, d, 0.02 * res_scale);
            b.b2 = const_vec(d, 0.0f);
        }
        if (cfg_.variant == Variant::CrossAttention) {
            // Cross-attention modules are always freshly initialized.
            b.lnc_g = const_vec(d, 1.0f);
            b.lnc_b = const_vec(d, 0.0f);
            b.cq_w = rand_weight(br, d, d, 0.02);
            b.cq_b = const_vec(d, 0.0f);
            b.ck_w = rand_weight(br, d, d, 0.02);
            b.ck_b = const_vec(d, 0.0f);
            b.cv_w = rand_weight(br, d, d, 0.02);
            b.cv_b = const_vec(d, 0.0f);
            b.co_w = rand_weight(br, d, d, 0.02 * res_scale);
            b.co_b = const_vec(d, 0.0f);
        }
    }

    // Two-layer head, hidden 4*d. The final layer starts at zero so step 0 is
    // a no-op steer; the unit-norm variant cannot normalize a zero vector, so
    // it starts from a small random layer instead.
    Rng hr = rng.split("head");
    head_w1_ = rand_weight(hr, d, 4 * d, 0.02);
    head_b1_ = const_vec(4 * d, 0.0f);
    if (cfg_.unit_norm_output) {
        head_w2_ = rand_weight(hr, 4 * d, d, 0.02 * res_scale);
    } else {
        head_w2_ = TensorF::zeros({4 * d, d}, true);
    }
    head_b2_ = const_vec(d, 0.0f);
}

std::vector<TensorF> Hypernet::parameters() const {
    std::vector<TensorF> ps{tok_emb_, pos_emb_, lnf_g_, lnf_b_,
                            head_w1_, head_b1_, head_w2_, head_b2_};
    for (const Block& b : blocks_) {
        for (const TensorF& t : {b.ln1_g, b.ln1_b, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo,
                                 b.bo, b.ln2_g, b.ln2_b, b.w1, b.b1, b.w2, b.b2})
            ps.push_back(t);
        if (cfg_.variant == Variant::CrossAttention) {
            for (const TensorF& t : {b.lnc_g, b.lnc_b, b.cq_w, b.cq_b, b.ck_w, b.ck_b, b.cv_w,
                                     b.cv_b, b.co_w, b.co_b})
                ps.push_back(t);
        }
    }
    return ps;
}

NamedTensors Hypernet::named_tensors() const {
    NamedTensors nt;
    nt.entries.emplace("hn.tok_emb", tok_emb_);
    nt.entries.emplace("hn.pos_emb", pos_emb_);
    nt.entries.emplace("hn.lnf_g", lnf_g_);
    nt.entries.emplace("hn.lnf_b", lnf_b_);
    nt.entries.emplace("hn.head_w1", head_w1_);
    nt.entries.emplace("hn.head_b1", head_b1_);
    nt.entries.emplace("hn.head_w2", head_w2_);
    nt.entries.emplace("hn.head_b2", head_b2_);
    for (std::size_t p = 0; p < blocks_.size(); ++p) {
        const Block& b = blocks_[p];
        std::string pre = "hn.block" + std::to_string(p) + ".";
        nt.entries.emplace(pre + "ln1_g", b.ln1_g);
        nt.entries.emplace(pre + "ln1_b", b.ln1_b);
        nt.entries.emplace(pre + "wq", b.wq);
        nt.entries.emplace(pre + "bq", b.bq);
        nt.entries.emplace(pre + "wk", b.wk);
        nt.entries.emplace(pre + "bk", b.bk);
        nt.entries.emplace(pre + "wv", b.wv);
        nt.entries.emplace(pre + "bv", b.bv);
        nt.entries.emplace(pre + "wo", b.wo);
        nt.entries.emplace(pre + "bo", b.bo);
        nt.entries.emplace(pre + "ln2_g", b.ln2_g);
        nt.entries.emplace(pre + "ln2_b", b.ln2_b);
        nt.entries.emplace(pre + "w1", b.w1);
        nt.entries.emplace(pre + "b1", b.b1);
        nt.entries.emplace(pre + "w2", b.w2);
        nt.entries.emplace(pre + "b2", b.b2);
        if (cfg_.variant == Variant::CrossAttention) {
            nt.entries.emplace(pre + "lnc_g", b.lnc_g);
            nt.entries.emplace(pre + "lnc_b", b.lnc_b);
            nt.entries.emplace(pre + "cq_w", b.cq_w);
            nt.entries.emplace(pre + "cq_b", b.cq_b);
            nt.entries.emplace(pre + "ck_w", b.ck_w);
            nt.entries.emplace(pre + "ck_b", b.ck_b);
            nt.entries.emplace(pre + "cv_w", b.cv_w);
            nt.entries.emplace(pre + "cv_b", b.cv_b);
            nt.entries.emplace(pre + "co_w", b.co_w);
            nt.entries.emplace(pre + "co_b", b.co_b);
        }
    }
    return nt;
}

void Hypernet::load_tensors(const NamedTensors& tensors) {
    auto own = named_tensors();
    for (auto& [name, dst] : own.entries) {
        auto it = tensors.entries.find(name);
        if (it == tensors.entries.end())
            throw DataError("Hypernet::load_tensors: missing tensor " + name);
        if (it->second.shape() != dst.shape())
            throw ShapeError("Hypernet::load_tensors: shape mismatch for " + name);
        dst.value() = it->second.value();
    }
}

TensorF multihead_attention(const TensorF& q_in, const TensorF& kv_in, const TensorF& wq,
                            const TensorF& bq, const TensorF& wk, const TensorF& bk,
                            const TensorF& wv, const TensorF& bv, const TensorF& wo,
                            const TensorF& bo, int n_heads, const TensorF& mask,
                            AttentionDump* dump, int block, const char* kind) {
    std::size_t d = q_in.cols();
    std::size_t dh = d / static_cast<std::size_t>(n_heads);
    TensorF q = add_rowvec(matmul(q_in, wq), bq);
    TensorF k = add_rowvec(matmul(kv_in, wk), bk);
    TensorF v = add_rowvec(matmul(kv_in, wv), bv);
    float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
    std::vector<TensorF> heads;
    heads.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h) {
        std::size_t c0 = h * dh, c1 = c0 + dh;
        TensorF qh = slice_cols(q, c0, c1);
        TensorF kh = slice_cols(k, c0, c1);
        TensorF vh = slice_cols(v, c0, c1);
        TensorF scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        if (mask.defined()) scores = add(scores, mask);
        TensorF probs = softmax(scores, 1);
        if (dump) {
            AttentionDump::Mat m;
            m.block = block;
            m.head = h;
            m.kind = kind;
            m.rows = probs.rows();
            m.cols = probs.cols();
            m.w = probs.value();
            dump->mats.push_back(std::move(m));
        }
        heads.push_back(matmul(probs, vh));
    }
    TensorF ctx = concat_cols(std::span<const TensorF>(heads));
    return add_rowvec(matmul(ctx, wo), bo);
}

TensorF Hypernet::block_forward(int block, const TensorF& x_prev,
                                const ResidualCapture* base_acts, AttentionDump* dump) const {
    if (block < 0 || block >= cfg_.n_blocks)
        throw IndexError("block_forward: block out of range");
    const Block& b = blocks_[block];
    TensorF x = x_prev;

    // (i) causal self-attention, pre-norm residual
    TensorF mask = tinylm::causal_mask(x.rows());
    TensorF xn = layer_norm(x, b.ln1_g, b.ln1_b, kLnEps);
    x = add(x, multihead_attention(xn, xn, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo,
                                   cfg_.n_heads, mask, dump, block, "self"));

    // (ii) cross-attention: queries from the hypernetwork stream, keys and
    // values from the base LM residual stream.
    if (cfg_.variant == Variant::CrossAttention && base_acts) {
        if (base_acts->d_model != static_cast<std::size_t>(cfg_.d_model))
            throw ShapeError("block_forward: base activation width mismatch");
        TensorF acts = TensorF::from(base_acts->acts, {base_acts->rows, base_acts->d_model});
        TensorF xc = layer_norm(x, b.lnc_g, b.lnc_b, kLnEps);
        x = add(x, multihead_attention(xc, acts, b.cq_w, b.cq_b, b.ck_w, b.ck_b, b.cv_w,
                                       b.cv_b, b.co_w, b.co_b, cfg_.n_cross_heads, TensorF{},
                                       dump, block, "cross"));
    }

    // (iii) feed-forward, pre-norm residual
    TensorF xm = layer_norm(x, b.ln2_g, b.ln2_b, kLnEps);
    TensorF h1 = gelu(add_rowvec(matmul(xm, b.w1), b.b1));
    x = add(x, add_rowvec(matmul(h1, b.w2), b.b2));
    return x;
}

TensorF Hypernet::encode_stream(const std::vector<int>& tokens,
                                const ResidualCapture* base_acts, AttentionDump* dump) const {
    if (tokens.empty()) throw LengthError("hypernet: empty input sequence");
    if (tokens.size() > static_cast<std::size_t>(cfg_.max_seq_len))
        throw LengthError("hypernet: sequence exceeds max_seq_len");
    std::vector<int> positions(tokens.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    TensorF x = add(embedding_lookup(tok_emb_, tokens), embedding_lookup(pos_emb_, positions));
    for (int p = 0; p < cfg_.n_blocks; ++p) x = block_forward(p, x, base_acts, dump);
    return x;
}

TensorF Hypernet::head_forward(const TensorF& h_last, bool skip_norm) const {
    TensorF h1 = gelu(add_rowvec(matmul(h_last, head_w1_), head_b1_));
    TensorF out = add_rowvec(matmul(h1, head_w2_), head_b2_);
    if (cfg_.unit_norm_output && !skip_norm) out = l2_normalize(out);
    return out;
}

TensorF Hypernet::steering_vector_t(const std::vector<int>& s, const std::vector<int>* x,
                                    const ResidualCapture* base_acts,
                                    AttentionDump* dump) const {
    if (s.empty()) throw LengthError("steering_vector: empty steering prompt");
    std::vector<int> tokens = s;
    const ResidualCapture* acts = nullptr;
    switch (cfg_.variant) {
        case Variant::NoContext:
            break;  // the base prompt is deliberately ignored
        case Variant::InContext: {
            if (!x) throw ArgumentError("steering_vector: in-context variant requires x");
            tokens.push_back(conceptlab::vocab::CSEP);
            tokens.insert(tokens.end(), x->begin(), x->end());
            break;
        }
        case Variant::CrossAttention: {
            if (!base_acts)
                throw ArgumentError(
                    "steering_vector: cross-attention variant requires base activations");
            acts = base_acts;
            break;
        }
    }
    TensorF states = encode_stream(tokens, acts, dump);
    TensorF last = slice_rows(layer_norm(states, lnf_g_, lnf_b_, kLnEps), states.rows() - 1,
                              states.rows());
    return head_forward(last);
}

SteeringVector Hypernet::generate_vector(const std::vector<int>& s, const std::vector<int>* x,
                                         const ResidualCapture* base_acts) const {
    TapeF::Pause pause;
    TensorF v = steering_vector_t(s, x, base_acts);
    SteeringVector sv;
    sv.values = v.value();
    sv.normalized = cfg_.unit_norm_output;
    sv.provenance = variant_name(cfg_.variant);
    return sv;
}

Hypernet::Encoding Hypernet::encode_steering_prompt(const std::vector<int>& s,
                                                    const ResidualCapture* base_acts) const {
    TapeF::Pause pause;
    if (s.empty()) throw LengthError("encode_steering_prompt: empty steering prompt");
    if (s.size() > static_cast<std::size_t>(cfg_.max_seq_len))
        throw LengthError("encode_steering_prompt: sequence exceeds max_seq_len");
    std::vector<int> positions(s.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    TensorF x = add(embedding_lookup(tok_emb_, s), embedding_lookup(pos_emb_, positions));
    Encoding enc;
    enc.t = s.size();
    enc.d = static_cast<std::size_t>(cfg_.d_model);
    for (int p = 0; p < cfg_.n_blocks; ++p) {
        x = block_forward(p, x, base_acts, nullptr);
        enc.layer_states.push_back(x.value());
    }
    TensorF last =
        slice_rows(layer_norm(x, lnf_g_, lnf_b_, kLnEps), x.rows() - 1, x.rows());
    enc.last_state = last.value();
    return enc;
}

// ---- training ----

double effective_lr(const TrainOpts& opts, int n_blocks) {
    if (!opts.depth_lr_rule) return opts.base_lr;
    return opts.base_lr * std::sqrt(20.0 / static_cast<double>(n_blocks));
}

namespace {

double example_loss(const Hypernet& h, const TinyLm& base, const conceptlab::SteeringTask& task,
                    int layer, double alpha, TensorF* out_loss) {
    ResidualCapture acts;
    const ResidualCapture* acts_ptr = nullptr;
    if (h.config().variant == Variant::CrossAttention) {
        acts = base.capture_residual(conceptlab::generation_prompt(task.x), layer);
        acts_ptr = &acts;
    }
    TensorF delta = h.steering_vector_t(task.s, &task.x, acts_ptr);
    tinylm::InterventionSpec iv;
    iv.layer = layer;
    iv.factor = static_cast<float>(alpha);
    iv.delta = delta;
    conceptlab::LabelledSequence seq = conceptlab::labelled_sequence(task);
    TensorF logits = base.forward(seq.tokens, &iv);
    TensorF ce = cross_entropy(logits, seq.targets, seq.mask);
    if (out_loss) *out_loss = ce;
    return ce.item();
}

}  // namespace

double e2e_eval_loss(const Hypernet& h, const TinyLm& base,
                     const std::vector<conceptlab::SteeringTask>& tasks, int layer,
                     double alpha) {
    if (tasks.empty()) throw DataError("e2e_eval_loss: empty task list");
    TapeF::Pause pause;
    double total = 0.0;
    for (const auto& t : tasks) total += example_loss(h, base, t, layer, alpha, nullptr);
    return total / static_cast<double>(tasks.size());
}

TrainResult train_e2e(Hypernet& h, const TinyLm& base,
                      const std::vector<conceptlab::SteeringTask>& data,
                      const TrainOpts& opts) {
    if (data.empty()) throw DataError("train_e2e: empty dataset");
    if (!base.frozen()) throw TrainingError("train_e2e: base LM must be frozen");

    TrainResult result;
    Adam opt(h.parameters(), {.lr = effective_lr(opts, h.config().n_blocks)});
    Rng order = Rng(opts.seed).split("e2e-order");

    std::uint64_t flop_count = 0;
    std::uint64_t* prev_counter = flops::counter();
    flops::set_counter(&flop_count);

    std::vector<std::vector<float>> snapshot;
    for (const auto& p : opt.params()) snapshot.push_back(p.value());
    auto restore = [&] {
        std::vector<TensorF> params = opt.params();
        for (std::size_t i = 0; i < params.size(); ++i) params[i].value() = snapshot[i];
    };

    std::vector<std::size_t> perm(data.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::size_t cursor = perm.size();

    long long steps_per_epoch =
        (static_cast<long long>(data.size()) + opts.batch - 1) / opts.batch;
    long long total_steps = steps_per_epoch * opts.epochs;
    if (opts.max_steps >= 0) total_steps = std::min<long long>(total_steps, opts.max_steps);

    for (long long step = 1; step <= total_steps; ++step) {
        std::uint64_t before = flop_count;
        TapeF tape;
        TensorF loss;
        bool blew_up = false;
        try {
            TapeF::Scope scope(tape);
            int n = opts.batch;
            for (int i = 0; i < n; ++i) {
                if (cursor >= perm.size()) {
                    order.shuffle(perm.begin(), perm.end());
                    cursor = 0;
                }
                const auto& task = data[perm[cursor++]];
                TensorF ce;
                example_loss(h, base, task, opts.intervention_layer, opts.alpha_train, &ce);
                TensorF w = scale(ce, 1.0f / static_cast<float>(n));
                loss = loss.defined() ? add(loss, w) : w;
            }
        } catch (const NumericError&) {
            blew_up = true;
        }
        if (blew_up || !std::isfinite(loss.defined() ? loss.item() : 0.0f)) {
            restore();
            flops::set_counter(prev_counter);
            throw DivergenceError(
                "train_e2e: loss diverged; diagnostic checkpoint restored",
                h.named_tensors());
        }
        float loss_v = loss.item();
        result.loss_trace.push_back(loss_v);
        tape.backward(loss);
        opt.step();
        opt.zero_grad();
        tape.clear();
        result.step_flops.push_back(flop_count - before);
        ++result.steps;
        if (step % 25 == 0) {
            snapshot.clear();
            for (const auto& p : opt.params()) snapshot.push_back(p.value());
        }

        if (opts.eval_set && opts.eval_every > 0 &&
            (step % opts.eval_every == 0 || step == total_steps)) {
            double el = e2e_eval_loss(h, base, *opts.eval_set, opts.intervention_layer,
                                      opts.alpha_train);
            result.final_eval_loss = el;
            result.eval_trace.emplace_back(static_cast<int>(step), el);
            if (opts.target_eval_loss >= 0.0 && el <= opts.target_eval_loss) {
                result.steps_to_target = static_cast<int>(step);
                break;
            }
        }
    }
    result.total_flops = flop_count;
    flops::set_counter(prev_counter);
    return result;
}

double reconstruction_loss(const std::vector<float>& v, const std::vector<float>& v_star) {
    if (v.size() != v_star.size())
        throw ShapeError("reconstruction_loss: length mismatch");
    double dot = 0.0, nv = 0.0, ns = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        dot += static_cast<double>(v[i]) * v_star[i];
        nv += static_cast<double>(v[i]) * v[i];
        ns += static_cast<double>(v_star[i]) * v_star[i];
        double d = static_cast<double>(v[i]) - v_star[i];
        sq += d * d;
    }
    if (ns <= 0.0) throw DataError("reconstruction_loss: zero-norm target");
    if (nv <= 0.0) throw NormalizationError("reconstruction_loss: zero-norm output");
    double cos = dot / std::sqrt(nv * ns);
    return 1.0 - cos + sq;
}

TrainResult train_reconstruction(Hypernet& h,
                                 const std::vector<std::pair<std::vector<int>,
                                                             std::vector<float>>>& pairs,
                                 const TrainOpts& opts) {
    if (pairs.empty()) throw DataError("train_reconstruction: empty dataset");
    if (h.config().variant != Variant::NoContext)
        throw ConfigError("train_reconstruction: variant must be the non-input-conditioned one");
    for (const auto& [s, target] : pairs) {
        double n = 0.0;
        for (float x : target) n += static_cast<double>(x) * x;
        if (n <= 0.0) throw DataError("train_reconstruction: zero-norm target vector");
    }

    TrainResult result;
    Adam opt(h.parameters(), {.lr = effective_lr(opts, h.config().n_blocks)});
    Rng order = Rng(opts.seed).split("recon-order");
    std::vector<std::size_t> perm(pairs.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::size_t cursor = perm.size();

    long long steps_per_epoch =
        (static_cast<long long>(pairs.size()) + opts.batch - 1) / opts.batch;
    long long total_steps = steps_per_epoch * opts.epochs;
    if (opts.max_steps >= 0) total_steps = std::min<long long>(total_steps, opts.max_steps);

    for (long long step = 1; step <= total_steps; ++step) {
        TapeF tape;
        TensorF loss;
        {
            TapeF::Scope scope(tape);
            for (int i = 0; i < opts.batch; ++i) {
                if (cursor >= perm.size()) {
                    order.shuffle(perm.begin(), perm.end());
                    cursor = 0;
                }
                const auto& [s, target] = pairs[perm[cursor++]];
                TensorF v = h.steering_vector_t(s, nullptr, nullptr);  // [1 x d]
                TensorF t = TensorF::from(target, {1, target.size()});
                double tn = 0.0;
                for (float x : target) tn += static_cast<double>(x) * x;
                // 1 - cos(v, t) + ||v - t||^2
                TensorF dot = sum(mul(v, t));
                TensorF inv_nv = rsqrt(sum(mul(v, v)));
                TensorF cos = scale(mul(dot, inv_nv), static_cast<float>(1.0 / std::sqrt(tn)));
                TensorF diff = sub(v, t);
                TensorF sq = sum(mul(diff, diff));
                TensorF one = TensorF::scalar(1.0f);
                TensorF l = add(sub(one, cos), sq);
                TensorF w = scale(l, 1.0f / static_cast<float>(opts.batch));
                loss = loss.defined() ? add(loss, w) : w;
            }
        }
        float loss_v = loss.item();
        if (!std::isfinite(loss_v))
            throw TrainingError("train_reconstruction: loss diverged");
        result.loss_trace.push_back(loss_v);
        tape.backward(loss);
        opt.step();
        opt.zero_grad();
        tape.clear();
        ++result.steps;
    }

    // Mean cosine to targets over the training pairs.
    double mc = 0.0;
    for (const auto& [s, target] : pairs) {
        SteeringVector sv = h.generate_vector(s, nullptr, nullptr);
        double dot = 0.0, nv = 0.0, ns = 0.0;
        for (std::size_t i = 0; i < target.size(); ++i) {
            dot += static_cast<double>(sv.values[i]) * target[i];
            nv += static_cast<double>(sv.values[i]) * sv.values[i];
            ns += static_cast<double>(target[i]) * target[i];
        }
        mc += dot / std::sqrt(std::max(nv * ns, 1e-30));
    }
    result.mean_cosine = mc / static_cast<double>(pairs.size());
    return result;
}

}  // namespace steerkit::hypernet
