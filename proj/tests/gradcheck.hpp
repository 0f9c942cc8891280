#pragma once

// Central finite-difference gradient checker (double precision). Each checked
// op is wrapped as scalar loss L = sum(weights * f(inputs)); the analytic
// gradient from the tape is compared against (L(x+h) - L(x-h)) / 2h.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "steerkit/rng.hpp"
#include "steerkit/tensor.hpp"

namespace gradcheck {

using steerkit::Rng;
using steerkit::TensorD;

struct Report {
    double max_rel_err = 0.0;
    std::string worst;
};

inline TensorD random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0,
                             bool requires_grad = true) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> v(n);
    for (auto& x : v) x = rng.next_normal() * scale;
    return TensorD::from(std::move(v), std::move(shape), requires_grad);
}

// fn must rebuild the full forward from the current input values and return a
// scalar loss tensor. inputs lists the tensors whose gradients are checked.
inline Report check(const std::function<TensorD()>& fn, std::vector<TensorD> inputs,
                    double h = 1e-6) {
    Report report;
    steerkit::TapeD tape;
    TensorD loss;
    {
        steerkit::TapeD::Scope scope(tape);
        loss = fn();
    }
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs) {
        t.ensure_grad();
        analytic.push_back(t.grad());
    }
    tape.clear();
    for (auto& t : inputs) t.zero_grad();

    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        auto& t = inputs[ti];
        for (std::size_t i = 0; i < t.numel(); ++i) {
            double orig = t.value()[i];
            t.value()[i] = orig + h;
            double up = fn().item();
            t.value()[i] = orig - h;
            double down = fn().item();
            t.value()[i] = orig;
            double numeric = (up - down) / (2.0 * h);
            double a = analytic[ti][i];
            double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = "input " + std::to_string(ti) + " index " + std::to_string(i) +
                               " analytic " + std::to_string(a) + " numeric " +
                               std::to_string(numeric);
            }
        }
    }
    return report;
}

// Randomized suite over every differentiable op; returns the max relative
// error seen. Used by both the unit tests and the acceptance gate.
double run_gradient_suite(int n_seeds, double* worst_out = nullptr,
                          std::string* worst_desc = nullptr);

}  // namespace gradcheck
