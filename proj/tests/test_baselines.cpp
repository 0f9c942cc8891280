#include <doctest.h>

#include <cmath>

#include "steerkit/baselines.hpp"
#include "steerkit/conceptlab.hpp"

using namespace steerkit;
using namespace steerkit::baselines;
namespace cl = steerkit::conceptlab;

namespace {

tinylm::LmConfig tiny_base_config() {
    tinylm::LmConfig cfg;
    cfg.vocab_size = 256;
    cfg.d_model = 32;
    cfg.n_layers = 3;
    cfg.n_heads = 2;
    cfg.d_ff = 64;
    cfg.max_seq_len = 48;
    return cfg;
}

cl::SteeringTask toy_task(int concept_id, std::vector<int> x) {
    cl::SteeringTask t;
    auto spec = cl::ConceptSpec::by_id(concept_id);
    t.x = std::move(x);
    t.s = spec.steering_prompt();
    t.y = spec.transform(cl::solve(t.x));
    t.concept_id = concept_id;
    t.task = cl::task_from_prompt(t.x);
    t.split = "train";
    return t;
}

}  // namespace

TEST_CASE("reft latent closed forms") {
    std::vector<float> e1{1, 0, 0};
    CHECK(reft_latent({3, 5, -2}, e1) == doctest::Approx(3.0));
    CHECK(reft_latent({-3, 5, -2}, e1) == doctest::Approx(0.0));  // ReLU clamps
    // positive homogeneity
    CHECK(reft_latent({6, 10, -4}, e1) == doctest::Approx(2.0 * reft_latent({3, 5, -2}, e1)));
    CHECK_THROWS_AS((void)reft_latent({1, 2}, e1), ShapeError);
    CHECK_THROWS_AS((void)reft_latent({1, 2, 3}, std::vector<float>{0, 0, 0}), DataError);
}

TEST_CASE("reft test-time magnitude is the top-k latent mean") {
    // latents {3, 1, 0} with k = 2 -> magnitude 2, direction w
    ReftR1Params p;
    p.w = {1, 0};
    p.k = 2;
    tinylm::ResidualCapture acts;
    acts.rows = 3;
    acts.d_model = 2;
    acts.acts = {3, 9, 1, -5, 0, 2};  // rows (3,9), (1,-5), (0,2): h.w = 3, 1, 0
    auto sv = reft_steer_vector(acts, p);
    CHECK(sv.values[0] == doctest::Approx(2.0f));
    CHECK(sv.values[1] == doctest::Approx(0.0f));

    // all latents zero -> zero vector
    ReftR1Params pz;
    pz.w = {0, 1};
    pz.k = 2;
    tinylm::ResidualCapture neg;
    neg.rows = 2;
    neg.d_model = 2;
    neg.acts = {5, -1, 7, -3};
    auto zv = reft_steer_vector(neg, pz);
    CHECK(zv.values[0] == 0.0f);
    CHECK(zv.values[1] == 0.0f);

    // k clamps to the position count; k = rows gives the mean latent
    ReftR1Params pk;
    pk.w = {1, 0};
    pk.k = 99;
    auto mv = reft_steer_vector(acts, pk);
    CHECK(mv.values[0] == doctest::Approx((3.0 + 1.0 + 0.0) / 3.0));

    // magnitude is invariant to permuting the positions
    tinylm::ResidualCapture perm;
    perm.rows = 3;
    perm.d_model = 2;
    perm.acts = {0, 2, 3, 9, 1, -5};
    auto pv = reft_steer_vector(perm, p);
    CHECK(pv.values[0] == doctest::Approx(sv.values[0]));

    // unit direction: |delta| equals the top-k mean exactly
    double norm = std::sqrt(static_cast<double>(sv.values[0]) * sv.values[0] +
                            static_cast<double>(sv.values[1]) * sv.values[1]);
    CHECK(norm == doctest::Approx(2.0));
}

TEST_CASE("reft training: lambda = 0 reduces to the pure LM loss") {
    tinylm::TinyLm base(tiny_base_config(), 91);
    base.freeze();
    std::vector<cl::SteeringTask> data{
        toy_task(cl::ConceptSpec::encode(cl::ConceptFamily::AppendMarker, 0),
                 {cl::vocab::TASK_ECHO, 33, 34}),
        toy_task(cl::ConceptSpec::encode(cl::ConceptFamily::AppendMarker, 0),
                 {cl::vocab::TASK_REV, 35, 36})};

    ReftTrainOpts opts;
    opts.lambda = 0.0;
    opts.epochs = 1;
    opts.batch = 2;
    opts.intervention_layer = 1;
    opts.seed = 7;
    ReftTrainResult with_zero;
    (void)reft_train(data, base, opts, &with_zero);

    // the same run with the penalty switched on has a strictly larger loss
    // whenever any latent is active, and never smaller
    ReftTrainOpts opts2 = opts;
    opts2.lambda = 0.5;
    ReftTrainResult with_pen;
    (void)reft_train(data, base, opts2, &with_pen);
    CHECK(with_pen.loss_trace.front() >= with_zero.loss_trace.front());

    CHECK_THROWS_AS((void)reft_train(data, base, [&] {
        auto o = opts;
        o.lambda = -1.0;
        return o;
    }()), ConfigError);

    // unit-norm direction after training
    auto params = reft_train(data, base, opts);
    double n = 0;
    for (float v : params.w) n += static_cast<double>(v) * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("diffmean arithmetic") {
    auto v = diffmean({{1, 0}}, {{0, 1}});
    CHECK(v.values[0] == doctest::Approx(1.0));
    CHECK(v.values[1] == doctest::Approx(-1.0));

    // identical sets cancel
    auto z = diffmean({{2, 3}, {4, 5}}, {{4, 5}, {2, 3}});
    CHECK(z.values[0] == doctest::Approx(0.0));
    CHECK(z.values[1] == doctest::Approx(0.0));

    // order within a set does not matter
    auto a = diffmean({{1, 2}, {3, 4}}, {{0, 0}});
    auto b = diffmean({{3, 4}, {1, 2}}, {{0, 0}});
    CHECK(a.values == b.values);

    // linearity in a scalar rescale of both sets
    auto s1 = diffmean({{2, 4}, {6, 8}}, {{0, 2}});
    auto s2 = diffmean({{1, 2}, {3, 4}}, {{0, 1}});
    CHECK(s1.values[0] == doctest::Approx(2.0 * s2.values[0]));
    CHECK(s1.values[1] == doctest::Approx(2.0 * s2.values[1]));

    CHECK_THROWS_AS((void)diffmean({}, {{1.0f}}), DataError);
    CHECK_THROWS_AS((void)diffmean({{1.0f}}, {}), DataError);
}

TEST_CASE("prompt steering builds the template deterministically") {
    std::vector<int> s{cl::vocab::KW_APPEND, cl::vocab::KW_MARKER, cl::vocab::MARKER0};
    std::vector<int> x{cl::vocab::TASK_ECHO, 33, 34, 35};
    auto aug = prompt_steer(s, x, 128);
    auto aug2 = prompt_steer(s, x, 128);
    CHECK(aug == aug2);

    // begins with template(s), ends with x verbatim
    CHECK(aug[0] == cl::vocab::TPL_USE);
    CHECK(aug[1] == cl::vocab::TPL_CONCEPT);
    CHECK(std::equal(s.begin(), s.end(), aug.begin() + 2));
    CHECK(std::equal(x.rbegin(), x.rend(), aug.rbegin()));

    CHECK_THROWS_AS((void)prompt_steer(s, x, 5), LengthError);
    CHECK_THROWS_AS((void)prompt_steer({}, x, 128), LengthError);
}

TEST_CASE("pooled activations average the answer span") {
    tinylm::TinyLm base(tiny_base_config(), 95);
    base.freeze();
    std::vector<int> x{cl::vocab::TASK_ECHO, 33, 34};
    auto y = cl::solve(x);
    auto pooled = pooled_activation(base, x, y, 1);
    CHECK(pooled.size() == 32);

    // matches a direct mean over the capture rows of the answer positions
    std::vector<int> seq{cl::vocab::BOS};
    seq.insert(seq.end(), x.begin(), x.end());
    seq.push_back(cl::vocab::SEP);
    std::size_t from = seq.size();
    seq.insert(seq.end(), y.begin(), y.end());
    auto cap = base.capture_residual(seq, 1);
    for (std::size_t j = 0; j < 32; ++j) {
        float want = 0;
        for (std::size_t i = from; i < seq.size(); ++i)
            want += cap.acts[i * 32 + j] / static_cast<float>(seq.size() - from);
        CHECK(pooled[j] == doctest::Approx(want).epsilon(1e-5));
    }
}
