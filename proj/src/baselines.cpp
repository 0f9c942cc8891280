#include "steerkit/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "steerkit/errors.hpp"
#include "steerkit/optim.hpp"

namespace steerkit::baselines {

using conceptlab::SteeringTask;
using tinylm::ResidualCapture;
using tinylm::TinyLm;

double reft_latent(const std::vector<float>& h, const std::vector<float>& w) {
    if (h.size() != w.size()) throw ShapeError("reft_latent: dimension mismatch");
    double nw = 0.0;
    for (float x : w) nw += static_cast<double>(x) * x;
    if (nw <= 0.0) throw DataError("reft_latent: direction has zero norm");
    double dot = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) dot += static_cast<double>(h[i]) * w[i];
    return dot > 0.0 ? dot : 0.0;
}

std::vector<double> reft_latents(const ResidualCapture& acts, const std::vector<float>& w) {
    std::vector<double> out(acts.rows);
    for (std::size_t i = 0; i < acts.rows; ++i) {
        std::vector<float> row(acts.acts.begin() + i * acts.d_model,
                               acts.acts.begin() + (i + 1) * acts.d_model);
        out[i] = reft_latent(row, w);
    }
    return out;
}

ReftR1Params reft_train(const std::vector<SteeringTask>& concept_data, const TinyLm& base,
                        const ReftTrainOpts& opts, ReftTrainResult* result) {
    if (concept_data.empty()) throw DataError("reft_train: empty dataset");
    if (opts.lambda < 0.0) throw ConfigError("reft_train: lambda must be >= 0");
    if (opts.k < 1) throw ConfigError("reft_train: k must be >= 1");
    if (!base.frozen()) throw TrainingError("reft_train: base LM must be frozen");

    auto d = static_cast<std::size_t>(base.config().d_model);
    Rng rng = Rng(opts.seed).split("reft");
    std::vector<float> w0(d);
    for (auto& v : w0) v = static_cast<float>(rng.next_normal() * 0.02);
    TensorF w = TensorF::from(std::move(w0), {1, d}, true);
    Adam opt({w}, {.lr = opts.lr});

    std::uint64_t flop_count = 0;
    std::uint64_t* prev_counter = flops::counter();
    flops::set_counter(&flop_count);

    Rng order = Rng(opts.seed).split("reft-order");
    std::vector<std::size_t> perm(concept_data.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::size_t cursor = perm.size();

    long long steps_per_epoch =
        (static_cast<long long>(concept_data.size()) + opts.batch - 1) / opts.batch;
    long long total_steps = steps_per_epoch * opts.epochs;

    for (long long step = 1; step <= total_steps; ++step) {
        std::uint64_t before = flop_count;
        TapeF tape;
        TensorF loss;
        {
            TapeF::Scope scope(tape);
            for (int i = 0; i < opts.batch; ++i) {
                if (cursor >= perm.size()) {
                    order.shuffle(perm.begin(), perm.end());
                    cursor = 0;
                }
                const auto& task = concept_data[perm[cursor++]];
                tinylm::InterventionSpec iv;
                iv.layer = opts.intervention_layer;
                iv.factor = static_cast<float>(opts.alpha_train);
                iv.delta = w;
                auto seq = conceptlab::labelled_sequence(task);
                TensorF logits = base.forward(seq.tokens, &iv);
                TensorF term = cross_entropy(logits, seq.targets, seq.mask);
                if (opts.lambda > 0.0) {
                    // L1 penalty over the non-top-k detection latents of the
                    // prompt positions; the top-k selection itself is not
                    // differentiated through.
                    ResidualCapture acts = base.capture_residual(
                        conceptlab::generation_prompt(task.x), opts.intervention_layer);
                    TensorF acts_t =
                        TensorF::from(acts.acts, {acts.rows, acts.d_model});
                    TensorF lat = relu(matmul(acts_t, transpose(w)));  // [P x 1]
                    std::vector<std::size_t> idx(lat.numel());
                    for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
                    const auto& lv = lat.value();
                    std::sort(idx.begin(), idx.end(),
                              [&](std::size_t a, std::size_t b) { return lv[a] > lv[b]; });
                    std::vector<float> keep(lat.numel(), 1.0f);
                    std::size_t k_eff =
                        std::min<std::size_t>(static_cast<std::size_t>(opts.k), idx.size());
                    for (std::size_t j = 0; j < k_eff; ++j) keep[idx[j]] = 0.0f;
                    TensorF mask_t = TensorF::from(std::move(keep), lat.shape());
                    TensorF penalty =
                        scale(sum(mul(lat, mask_t)), static_cast<float>(opts.lambda));
                    term = add(term, penalty);
                }
                TensorF wterm = scale(term, 1.0f / static_cast<float>(opts.batch));
                loss = loss.defined() ? add(loss, wterm) : wterm;
            }
        }
        float loss_v = loss.item();
        if (!std::isfinite(loss_v)) {
            flops::set_counter(prev_counter);
            throw TrainingError("reft_train: loss diverged");
        }
        if (result) result->loss_trace.push_back(loss_v);
        tape.backward(loss);
        opt.step();
        opt.zero_grad();
        tape.clear();
        if (result) result->step_flops.push_back(flop_count - before);
    }
    if (result) result->total_flops = flop_count;
    flops::set_counter(prev_counter);

    ReftR1Params params;
    params.lambda = opts.lambda;
    params.k = opts.k;
    params.w = w.value();
    double n = 0.0;
    for (float v : params.w) n += static_cast<double>(v) * v;
    n = std::sqrt(n);
    if (n <= 0.0) throw TrainingError("reft_train: trained direction collapsed to zero");
    for (float& v : params.w) v = static_cast<float>(v / n);
    return params;
}

double reft_objective(const TinyLm& base, const std::vector<SteeringTask>& tasks,
                      const std::vector<float>& w, double lambda, int k, int layer,
                      double alpha) {
    if (tasks.empty()) throw DataError("reft_objective: empty task list");
    if (lambda < 0.0) throw ConfigError("reft_objective: lambda must be >= 0");
    TapeF::Pause pause;
    double total = 0.0;
    for (const auto& task : tasks) {
        tinylm::InterventionSpec iv =
            tinylm::InterventionSpec::from_values(layer, static_cast<float>(alpha), w);
        auto seq = conceptlab::labelled_sequence(task);
        TensorF logits = base.forward(seq.tokens, &iv);
        double term = cross_entropy(logits, seq.targets, seq.mask).item();
        if (lambda > 0.0) {
            ResidualCapture acts =
                base.capture_residual(conceptlab::generation_prompt(task.x), layer);
            std::vector<double> lat = reft_latents(acts, w);
            std::vector<double> sorted = lat;
            std::sort(sorted.begin(), sorted.end(), std::greater<double>());
            std::size_t k_eff = std::min<std::size_t>(static_cast<std::size_t>(k),
                                                      sorted.size());
            double penalty = 0.0;
            for (std::size_t i = k_eff; i < sorted.size(); ++i) penalty += sorted[i];
            term += lambda * penalty;
        }
        total += term;
    }
    return total / static_cast<double>(tasks.size());
}

SteeringVector reft_steer_vector(const ResidualCapture& prompt_acts,
                                 const ReftR1Params& params) {
    if (params.k < 1) throw ConfigError("reft_steer_vector: k must be >= 1");
    std::vector<double> lat = reft_latents(prompt_acts, params.w);
    std::size_t k_eff = std::min<std::size_t>(static_cast<std::size_t>(params.k), lat.size());
    std::sort(lat.begin(), lat.end(), std::greater<double>());
    double mag = 0.0;
    for (std::size_t i = 0; i < k_eff; ++i) mag += lat[i];
    mag /= static_cast<double>(k_eff);
    SteeringVector sv;
    sv.values.resize(params.w.size());
    for (std::size_t i = 0; i < sv.values.size(); ++i)
        sv.values[i] = static_cast<float>(mag * params.w[i]);
    sv.normalized = false;
    sv.provenance = "reft_r1";
    return sv;
}

SteeringVector diffmean(const std::vector<std::vector<float>>& pos_acts,
                        const std::vector<std::vector<float>>& neg_acts) {
    if (pos_acts.empty() || neg_acts.empty())
        throw DataError("diffmean: both activation sets must be nonempty");
    std::size_t d = pos_acts[0].size();
    std::vector<double> mp(d, 0.0), mn(d, 0.0);
    for (const auto& v : pos_acts) {
        if (v.size() != d) throw ShapeError("diffmean: inconsistent dimensions");
        for (std::size_t i = 0; i < d; ++i) mp[i] += v[i];
    }
    for (const auto& v : neg_acts) {
        if (v.size() != d) throw ShapeError("diffmean: inconsistent dimensions");
        for (std::size_t i = 0; i < d; ++i) mn[i] += v[i];
    }
    SteeringVector sv;
    sv.values.resize(d);
    for (std::size_t i = 0; i < d; ++i)
        sv.values[i] = static_cast<float>(mp[i] / pos_acts.size() - mn[i] / neg_acts.size());
    sv.normalized = false;
    sv.provenance = "diffmean";
    return sv;
}

std::vector<float> pooled_activation(const TinyLm& base, const std::vector<int>& x,
                                     const std::vector<int>& y, int layer) {
    using namespace conceptlab;
    std::vector<int> seq;
    seq.push_back(vocab::BOS);
    seq.insert(seq.end(), x.begin(), x.end());
    seq.push_back(vocab::SEP);
    std::size_t y_from = seq.size();
    seq.insert(seq.end(), y.begin(), y.end());
    ResidualCapture cap = base.capture_residual(seq, layer);
    std::vector<float> pooled(cap.d_model, 0.0f);
    std::size_t n = seq.size() - y_from;
    if (n == 0) throw DataError("pooled_activation: empty answer span");
    for (std::size_t i = y_from; i < seq.size(); ++i)
        for (std::size_t j = 0; j < cap.d_model; ++j)
            pooled[j] += cap.acts[i * cap.d_model + j] / static_cast<float>(n);
    return pooled;
}

std::vector<int> prompt_steer(const std::vector<int>& s, const std::vector<int>& x,
                              int max_seq_len) {
    if (s.empty() || x.empty()) throw LengthError("prompt_steer: s and x must be nonempty");
    using namespace conceptlab;
    std::vector<int> out{vocab::TPL_USE, vocab::TPL_CONCEPT};
    out.insert(out.end(), s.begin(), s.end());
    out.push_back(vocab::TPL_THEN);
    out.insert(out.end(), x.begin(), x.end());
    if (static_cast<int>(out.size()) > max_seq_len)
        throw LengthError("prompt_steer: combined length exceeds max_seq_len");
    return out;
}

}  // namespace steerkit::baselines
