#include "steerkit/optim.hpp"

#include <cmath>

#include "steerkit/errors.hpp"

namespace steerkit {

Adam::Adam(std::vector<TensorF> params, Options opts) : params_(std::move(params)), opts_(opts) {
    if (opts_.lr <= 0.0) throw ConfigError("adam: lr must be positive");
    if (opts_.eps <= 0.0) throw ConfigError("adam: eps must be positive");
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].numel(), 0.0f);
        v_[i].assign(params_[i].numel(), 0.0f);
    }
}

void Adam::set_lr(double lr) {
    if (lr <= 0.0) throw ConfigError("adam: lr must be positive");
    opts_.lr = lr;
}

void Adam::step() {
    ++step_;
    double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        TensorF& t = params_[p];
        if (!t.requires_grad() || !t.has_grad()) continue;
        auto& val = t.value();
        const auto& g = t.grad();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < val.size(); ++i) {
            double gi = g[i];
            double mi = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * gi;
            double vi = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            double mhat = mi / bc1;
            double vhat = vi / bc2;
            val[i] -= static_cast<float>(opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps));
        }
    }
}

void Adam::zero_grad() {
    for (auto& t : params_) t.zero_grad();
}

}  // namespace steerkit
