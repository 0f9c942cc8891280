#include <doctest.h>

#include <cmath>
#include <span>

#include "steerkit/optim.hpp"
#include "steerkit/tensor.hpp"
#include "tests/gradcheck.hpp"

using namespace steerkit;

namespace {

// Schoolbook triple-loop product, the independent oracle for matmul.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 std::size_t m, std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t l = 0; l < k; ++l) c[i * n + j] += a[i * k + l] * b[l * n + j];
    return c;
}

}  // namespace

TEST_CASE("matmul identity and schoolbook oracle") {
    TensorD eye = TensorD::from({1, 0, 0, 0, 1, 0, 0, 0, 1}, {3, 3});
    TensorD a = TensorD::from({2, -1, 0.5, 4, 7, -3, 1, 0, 9}, {3, 3});
    TensorD prod = matmul(eye, a);
    for (std::size_t i = 0; i < 9; ++i) CHECK(prod.value()[i] == doctest::Approx(a.value()[i]));

    TensorD x = TensorD::from({1, 2, 3, 4}, {2, 2});
    TensorD y = TensorD::from({5, 6}, {2, 1});
    TensorD r = matmul(x, y);
    CHECK(r.value()[0] == doctest::Approx(17.0));
    CHECK(r.value()[1] == doctest::Approx(39.0));

    Rng rng(3);
    auto A = gradcheck::random_tensor(rng, {3, 4}, 1.0, false);
    auto B = gradcheck::random_tensor(rng, {4, 2}, 1.0, false);
    auto got = matmul(A, B);
    auto want = naive_matmul(A.value(), B.value(), 3, 4, 2);
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(got.value()[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("matmul shape error and derivative of sum") {
    TensorD a = TensorD::from({1, 2, 3, 4, 5, 6}, {2, 3});
    TensorD b = TensorD::from({1, 2}, {2, 1});
    CHECK_THROWS_AS((void)matmul(a, b), ShapeError);

    // d(sum(A . I))/dA = all-ones
    TensorD A = TensorD::from({1, 2, 3, 4}, {2, 2}, true);
    TensorD eye = TensorD::from({1, 0, 0, 1}, {2, 2});
    TapeD tape;
    TensorD loss;
    {
        TapeD::Scope scope(tape);
        loss = sum(matmul(A, eye));
    }
    tape.backward(loss);
    for (double g : A.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("softmax basics") {
    TensorD x = TensorD::from({0, 0, 0}, {1, 3});
    auto y = softmax(x, 1);
    for (double v : y.value()) CHECK(v == doctest::Approx(1.0 / 3.0));

    TensorD z = TensorD::from({0.0, std::log(3.0)}, {1, 2});
    auto s = softmax(z, 1);
    CHECK(s.value()[0] == doctest::Approx(0.25));
    CHECK(s.value()[1] == doctest::Approx(0.75));

    // shift invariance
    Rng rng(11);
    auto r = gradcheck::random_tensor(rng, {4, 6}, 2.0, false);
    auto shifted = add_scalar(r, 13.5);
    auto p1 = softmax(r, 1), p2 = softmax(shifted, 1);
    for (std::size_t i = 0; i < p1.numel(); ++i)
        CHECK(p1.value()[i] == doctest::Approx(p2.value()[i]).epsilon(1e-9));

    // rows sum to one
    for (std::size_t i = 0; i < 4; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < 6; ++j) row += p1.value()[i * 6 + j];
        CHECK(std::abs(row - 1.0) < 1e-6);
    }

    TensorD bad = TensorD::from({std::nan(""), 1.0}, {1, 2});
    CHECK_THROWS_AS((void)softmax(bad, 1), NumericError);
}

TEST_CASE("layer_norm basics") {
    TensorD g = TensorD::from({1, 1, 1}, {3});
    TensorD b = TensorD::from({0, 0, 0}, {3});
    TensorD x = TensorD::from({5, 5, 5}, {1, 3});
    auto y = layer_norm(x, g, b, 1e-5);
    for (double v : y.value()) CHECK(std::abs(v) < 1e-9);

    TensorD g2 = TensorD::from({1, 1}, {2});
    TensorD b2 = TensorD::from({0, 0}, {2});
    TensorD x2 = TensorD::from({1, -1}, {1, 2});
    auto y2 = layer_norm(x2, g2, b2, 1e-12);
    CHECK(y2.value()[0] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(y2.value()[1] == doctest::Approx(-1.0).epsilon(1e-5));

    CHECK_THROWS_AS((void)layer_norm(x2, g2, b2, 0.0), ConfigError);

    // normalized rows: |mean| < 1e-6 and |var - 1| < 1e-4 before affine
    Rng rng(5);
    auto r = gradcheck::random_tensor(rng, {6, 16}, 3.0, false);
    TensorD ones = TensorD::full({16}, 1.0);
    TensorD zeros = TensorD::full({16}, 0.0);
    auto n = layer_norm(r, ones, zeros, 1e-10);
    for (std::size_t i = 0; i < 6; ++i) {
        double mean = 0, var = 0;
        for (std::size_t j = 0; j < 16; ++j) mean += n.value()[i * 16 + j];
        mean /= 16;
        for (std::size_t j = 0; j < 16; ++j) {
            double d = n.value()[i * 16 + j] - mean;
            var += d * d;
        }
        var /= 16;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("cross_entropy closed forms and oracle") {
    // uniform logits, V = 4 -> ln 4
    TensorD logits = TensorD::full({2, 4}, 0.7);
    std::vector<int> targets{1, 3};
    std::vector<std::uint8_t> mask{1, 1};
    auto ce = cross_entropy(logits, targets, mask);
    CHECK(ce.item() == doctest::Approx(std::log(4.0)).epsilon(1e-9));

    // one-hot logits with growing margin -> loss -> 0
    double prev = 1e9;
    for (double margin : {2.0, 6.0, 12.0}) {
        TensorD l = TensorD::from({margin, 0, 0, 0}, {1, 4});
        auto c = cross_entropy(l, {0}, {1});
        CHECK(c.item() < prev);
        prev = c.item();
    }
    CHECK(prev < 1e-4);

    // random 3x5 vs a direct log-sum-exp oracle
    Rng rng(17);
    auto l = gradcheck::random_tensor(rng, {3, 5}, 2.0, false);
    std::vector<int> t{4, 0, 2};
    std::vector<std::uint8_t> m{1, 0, 1};
    auto got = cross_entropy(l, t, m);
    double want = 0.0;
    int active = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        if (!m[i]) continue;
        double lse = 0.0;
        for (std::size_t j = 0; j < 5; ++j) lse += std::exp(l.value()[i * 5 + j]);
        want += std::log(lse) - l.value()[i * 5 + t[i]];
        ++active;
    }
    want /= active;
    CHECK(got.item() == doctest::Approx(want).epsilon(1e-6));

    CHECK_THROWS_AS((void)cross_entropy(l, std::vector<int>{9, 0, 0}, m), IndexError);
    CHECK_THROWS_AS((void)cross_entropy(l, t, std::vector<std::uint8_t>{0, 0, 0}), MeanError);
}

TEST_CASE("backward basics and tape contract") {
    TensorD x = TensorD::from({1, 2, 3}, {3}, true);
    TapeD tape;
    TensorD loss;
    {
        TapeD::Scope scope(tape);
        loss = sum(x);
    }
    tape.backward(loss);
    for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
    CHECK_THROWS_AS(tape.backward(loss), TapeError);
    tape.clear();
    CHECK(tape.size() == 0);

    // gradients flow through frozen tensors without accumulating on them
    TensorD frozen = TensorD::from({1, 2, 3, 4}, {2, 2}, false);
    TensorD live = TensorD::from({1, 1}, {1, 2}, true);
    TapeD tape2;
    TensorD loss2;
    {
        TapeD::Scope scope(tape2);
        loss2 = sum(matmul(live, frozen));
    }
    tape2.backward(loss2);
    CHECK(!frozen.has_grad());
    REQUIRE(live.has_grad());
    CHECK(live.grad()[0] == doctest::Approx(3.0));  // row sums of frozen
    CHECK(live.grad()[1] == doctest::Approx(7.0));
}

TEST_CASE("gradient suite (randomized finite differences)") {
    std::string worst;
    double err = gradcheck::run_gradient_suite(5, nullptr, &worst);
    INFO("worst: ", worst);
    CHECK(err < 1e-4);
}

TEST_CASE("adam contract") {
    auto p = TensorF::from({1.0f, -2.0f}, {2}, true);
    Adam opt({p}, {.lr = 0.1});

    // zero gradient -> parameters unchanged
    p.ensure_grad();
    opt.step();
    CHECK(p.value()[0] == doctest::Approx(1.0f));
    CHECK(p.value()[1] == doctest::Approx(-2.0f));

    // first step with scalar grad g: update ~ -lr * g / (|g| + eps)
    auto q = TensorF::from({0.5f}, {1}, true);
    Adam opt2({q}, {.lr = 0.1});
    q.ensure_grad();
    q.grad()[0] = 0.3f;
    opt2.step();
    CHECK(q.value()[0] == doctest::Approx(0.5f - 0.1f * (0.3f / (0.3f + 1e-8f))).epsilon(1e-5));

    CHECK_THROWS_AS(Adam({}, {.lr = -1.0}), ConfigError);

    // determinism: identical runs produce bit-identical parameters
    auto run = [] {
        Rng rng(20);
        auto t = TensorF::from({0.3f, -0.7f, 1.1f}, {3}, true);
        Adam o({t}, {.lr = 0.05});
        for (int i = 0; i < 20; ++i) {
            t.ensure_grad();
            for (std::size_t j = 0; j < 3; ++j)
                t.grad()[j] = static_cast<float>(rng.next_normal());
            o.step();
            t.zero_grad();
        }
        return t.value();
    };
    auto a = run(), b = run();
    CHECK(a == b);
}

TEST_CASE("flop accounting counts matmul chains exactly") {
    std::uint64_t counter = 0;
    flops::set_counter(&counter);
    TensorF a = TensorF::full({3, 4}, 1.0f);
    TensorF b = TensorF::full({4, 5}, 1.0f);
    TensorF c = TensorF::full({5, 2}, 1.0f);
    auto d = matmul(matmul(a, b), c);
    (void)d;
    flops::set_counter(nullptr);
    CHECK(counter == 2ull * 3 * 4 * 5 + 2ull * 3 * 5 * 2);
}

TEST_CASE("tensor validation helpers") {
    TensorF t = TensorF::from({1.0f, std::numeric_limits<float>::quiet_NaN()}, {2});
    CHECK(t.has_bad_values());
    TensorF ok = TensorF::from({1.0f, 2.0f}, {2});
    CHECK(!ok.has_bad_values());
    CHECK_THROWS_AS((void)TensorF::from({1.0f}, {3}), ShapeError);
    CHECK_THROWS_AS((void)l2_normalize(TensorF::full({3}, 0.0f)), NormalizationError);
    CHECK_THROWS_AS((void)rsqrt(TensorF::from({-1.0f}, {1})), NumericError);
}
