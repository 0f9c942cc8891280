#include <doctest.h>

#include <cmath>

#include "steerkit/conceptlab.hpp"
#include "steerkit/tinylm.hpp"

using namespace steerkit;
using namespace steerkit::tinylm;

namespace {

LmConfig tiny_config() {
    LmConfig cfg;
    cfg.vocab_size = 64;
    cfg.d_model = 32;
    cfg.n_layers = 3;
    cfg.n_heads = 2;
    cfg.d_ff = 64;
    cfg.max_seq_len = 32;
    return cfg;
}

std::vector<int> tokens_of(std::initializer_list<int> t) { return {t}; }

}  // namespace

TEST_CASE("config validation") {
    LmConfig bad = tiny_config();
    bad.n_heads = 5;  // 32 % 5 != 0
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tiny_config();
    bad.positional = "rotary";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("forward shapes, length checks, determinism") {
    TinyLm lm(tiny_config(), 1);
    auto toks = tokens_of({0, 5, 9, 3});
    auto logits = lm.forward(toks);
    CHECK(logits.rows() == 4);
    CHECK(logits.cols() == 64);

    auto logits2 = lm.forward(toks);
    CHECK(logits.value() == logits2.value());

    std::vector<int> too_long(40, 1);
    CHECK_THROWS_AS((void)lm.forward(too_long), LengthError);
    CHECK_THROWS_AS((void)lm.forward({}), LengthError);
    CHECK_THROWS_AS((void)lm.forward(tokens_of({99})), IndexError);
}

TEST_CASE("intervention identities are bit-exact") {
    TinyLm lm(tiny_config(), 2);
    auto toks = tokens_of({0, 7, 11, 2, 30});
    auto clean = lm.forward(toks).value();

    std::vector<float> dv(32);
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = 0.1f * static_cast<float>(i) - 1.0f;

    // alpha = 0
    auto iv0 = InterventionSpec::from_values(1, 0.0f, dv);
    CHECK(lm.forward(toks, &iv0).value() == clean);

    // delta = 0, alpha = 7
    auto ivz = InterventionSpec::from_values(1, 7.0f, std::vector<float>(32, 0.0f));
    CHECK(lm.forward(toks, &ivz).value() == clean);

    // homogeneity: (alpha, delta) vs (1, alpha * delta)
    float alpha = 2.5f;
    std::vector<float> scaled(32);
    for (std::size_t i = 0; i < 32; ++i) scaled[i] = alpha * dv[i];
    auto iva = InterventionSpec::from_values(1, alpha, dv);
    auto ivb = InterventionSpec::from_values(1, 1.0f, scaled);
    CHECK(lm.forward(toks, &iva).value() == lm.forward(toks, &ivb).value());

    // alpha = 2, delta = v equals alpha = 1, delta = 2v (the spec's phrasing)
    std::vector<float> doubled(32);
    for (std::size_t i = 0; i < 32; ++i) doubled[i] = 2.0f * dv[i];
    auto iv2v = InterventionSpec::from_values(1, 2.0f, dv);
    auto iv1d = InterventionSpec::from_values(1, 1.0f, doubled);
    CHECK(lm.forward(toks, &iv2v).value() == lm.forward(toks, &iv1d).value());

    // a nonzero intervention actually changes the logits
    auto iv = InterventionSpec::from_values(1, 1.0f, dv);
    CHECK(lm.forward(toks, &iv).value() != clean);

    auto bad_layer = InterventionSpec::from_values(99, 1.0f, dv);
    CHECK_THROWS_AS((void)lm.forward(toks, &bad_layer), IndexError);
}

TEST_CASE("residual capture: shape, determinism, locality") {
    TinyLm lm(tiny_config(), 3);
    auto toks = tokens_of({0, 4, 8, 12});

    auto cap = lm.capture_residual(toks, 1);
    CHECK(cap.rows == 4);
    CHECK(cap.d_model == 32);
    CHECK(cap.acts.size() == 4 * 32);
    auto cap2 = lm.capture_residual(toks, 1);
    CHECK(cap.acts == cap2.acts);
    CHECK_THROWS_AS((void)lm.capture_residual(toks, 3), IndexError);

    // capture at layer l is unchanged when parameters of layers > l move
    TinyLm perturbed(tiny_config(), 3);
    auto params = BlockAccess::block_params(perturbed, 2);
    for (auto& p : params)
        for (auto& v : p.value()) v += 0.25f;
    auto cap_p = perturbed.capture_residual(toks, 1);
    CHECK(cap.acts == cap_p.acts);

    // an intervention at layer l leaves captures below l bit-identical
    std::vector<float> dv(32, 0.5f);
    auto iv = InterventionSpec::from_values(2, 1.0f, dv);
    auto clean_all = lm.capture_all(toks, nullptr);
    auto steered_all = lm.capture_all(toks, &iv);
    CHECK(clean_all[0] == steered_all[0]);
    CHECK(clean_all[1] == steered_all[1]);
    CHECK(clean_all[2] != steered_all[2]);
}

TEST_CASE("causality: future tokens cannot influence past logits") {
    TinyLm lm(tiny_config(), 4);
    auto a = tokens_of({0, 5, 9, 3, 7});
    auto b = tokens_of({0, 5, 9, 62, 61});  // differs only at positions >= 3
    auto la = lm.forward(a).value();
    auto lb = lm.forward(b).value();
    for (std::size_t i = 0; i < 3 * 64; ++i) CHECK(la[i] == lb[i]);
    CHECK(la != lb);
}

TEST_CASE("generation contract") {
    TinyLm lm(tiny_config(), 5);
    DecodeOpts d;
    d.max_new = 6;
    d.eos_id = 1;
    auto p = tokens_of({0, 9, 2});

    auto g1 = lm.generate(p, nullptr, d);
    auto g2 = lm.generate(p, nullptr, d);
    CHECK(g1 == g2);
    CHECK(g1.size() <= 6);

    d.max_new = 0;
    CHECK(lm.generate(p, nullptr, d).empty());
    CHECK_THROWS_AS((void)lm.generate({}, nullptr, d), LengthError);

    // sampled mode: deterministic given a seed, varies across seeds
    DecodeOpts s;
    s.mode = DecodeOpts::Mode::Sample;
    s.temperature = 1.0;
    s.max_new = 8;
    s.seed = 123;
    auto s1 = lm.generate(p, nullptr, s);
    auto s2 = lm.generate(p, nullptr, s);
    CHECK(s1 == s2);
    bool any_diff = false;
    for (std::uint64_t seed = 0; seed < 8 && !any_diff; ++seed) {
        s.seed = seed;
        any_diff = lm.generate(p, nullptr, s) != s1;
    }
    CHECK(any_diff);
}

TEST_CASE("perplexity: uniform logits give vocab size") {
    TinyLm lm(tiny_config(), 6);
    // zero the unembedding -> logits identically zero -> uniform distribution
    auto nt = lm.named_tensors();
    auto& unemb = nt.entries.at("lm.unemb");
    std::fill(unemb.value().begin(), unemb.value().end(), 0.0f);
    auto toks = tokens_of({0, 3, 9, 4, 2});
    CHECK(lm.perplexity(toks) == doctest::Approx(64.0).epsilon(1e-4));
    CHECK_THROWS_AS((void)lm.perplexity(tokens_of({5})), LengthError);
}

TEST_CASE("pretraining: init contract, first loss, divergence error") {
    auto cfg = tiny_config();
    std::vector<std::vector<int>> corpus{{4, 33, 2, 33}, {5, 34, 2, 34}, {4, 35, 2, 35}};

    // steps = 0 returns the initialization verbatim
    PretrainOpts zero;
    zero.steps = 0;
    auto init = pretrain(corpus, cfg, zero, 77);
    TinyLm fresh(cfg, 77);
    CHECK(init.named_tensors().entries.at("lm.unemb").value() ==
          fresh.named_tensors().entries.at("lm.unemb").value());

    // loss at step 0 is about ln(vocab) for a near-uniform init
    PretrainOpts one;
    one.steps = 1;
    one.batch_lines = 3;
    PretrainResult res;
    (void)pretrain(corpus, cfg, one, 77, &res);
    CHECK(res.loss_trace.front() == doctest::Approx(std::log(64.0)).epsilon(0.05));

    // divergence raises a training error
    PretrainOpts diverge;
    diverge.steps = 60;
    diverge.batch_lines = 3;
    diverge.lr = 1e30;
    diverge.warmup = 0;
    CHECK_THROWS_AS((void)pretrain(corpus, cfg, diverge, 77), TrainingError);
}

TEST_CASE("overfitting a tiny corpus drives memorized-line perplexity down") {
    auto cfg = tiny_config();
    std::vector<std::vector<int>> corpus{{4, 33, 34, 2, 33, 34}, {5, 35, 36, 2, 36, 35}};
    PretrainOpts opts;
    opts.steps = 260;
    opts.batch_lines = 2;
    opts.lr = 3e-3;
    opts.warmup = 20;
    auto lm = pretrain(corpus, cfg, opts, 9);
    lm.freeze();

    std::vector<int> line{0, 4, 33, 34, 2, 33, 34, 1};
    double memorized = lm.perplexity(line);
    CHECK(memorized < 1.2);

    // inserting a random token into a fluent line strictly increases it
    std::vector<int> corrupted{0, 4, 33, 61, 34, 2, 33, 34, 1};
    CHECK(lm.perplexity(corrupted) > memorized);

    // frozen-parameter contract: checksum is stable across forwards
    auto before = lm.checksum();
    (void)lm.forward({0, 4, 33, 2});
    DecodeOpts d;
    d.max_new = 4;
    (void)lm.generate({0, 4, 33, 2}, nullptr, d);
    CHECK(lm.checksum() == before);
    CHECK(lm.frozen());
}

TEST_CASE("checkpoint round-trip restores the exact forward") {
    TinyLm lm(tiny_config(), 8);
    auto toks = tokens_of({0, 6, 12, 18});
    auto logits = lm.forward(toks).value();
    auto tensors = lm.named_tensors();

    TinyLm other(tiny_config(), 999);
    CHECK(other.forward(toks).value() != logits);
    other.load_tensors(tensors);
    CHECK(other.forward(toks).value() == logits);
}
