#pragma once

#include <cstdint>
#include <vector>

#include "steerkit/tensor.hpp"

namespace steerkit {

// Bias-corrected adaptive-moment optimizer. Frozen tensors
// (requires_grad == false) are skipped entirely; an absent gradient leaves
// the parameter and its moments untouched.
class Adam {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.95;
        double eps = 1e-8;
    };

    Adam(std::vector<TensorF> params, Options opts);

    void step();
    void zero_grad();

    std::int64_t step_count() const { return step_; }
    double lr() const { return opts_.lr; }
    void set_lr(double lr);
    const std::vector<TensorF>& params() const { return params_; }

private:
    std::vector<TensorF> params_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    Options opts_;
    std::int64_t step_ = 0;
};

}  // namespace steerkit
