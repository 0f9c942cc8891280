#include "steerkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace steerkit {

namespace flops {
namespace {
std::uint64_t* g_counter = nullptr;
}
void set_counter(std::uint64_t* counter) { g_counter = counter; }
std::uint64_t* counter() { return g_counter; }
inline void add(std::uint64_t n) {
    if (g_counter) *g_counter += n;
}
}  // namespace flops

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch");
}

template <typename T>
bool needs(const std::shared_ptr<TensorNode<T>>& n) {
    return n->on_graph || n->requires_grad;
}

template <typename T>
void ensure_grad_of(const std::shared_ptr<TensorNode<T>>& n) {
    if (n->grad.empty()) n->grad.assign(n->value.size(), T(0));
}

// ---- matmul kernels ----
// C (m x n) += A (m x k) . B (k x n). ikj order; inner loop is an axpy that
// the compiler vectorizes. FLOPs are counted here so forward and backward
// products are both captured.
template <typename T>
void mm_nn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    flops::add(static_cast<std::uint64_t>(2) * m * n * k);
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t l = 0; l < k; ++l) {
            T av = arow[l];
            if (av == T(0)) continue;
            const T* brow = b + l * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C (m x n) += A (m x k) . B^T where B is (n x k).
template <typename T>
void mm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    flops::add(static_cast<std::uint64_t>(2) * m * n * k);
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] += acc;
        }
    }
}

// C (m x n) += A^T . B where A is (k x m), B is (k x n).
template <typename T>
void mm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    flops::add(static_cast<std::uint64_t>(2) * m * n * k);
    for (std::size_t l = 0; l < k; ++l) {
        const T* arow = a + l * m;
        const T* brow = b + l * n;
        for (std::size_t i = 0; i < m; ++i) {
            T av = arow[i];
            if (av == T(0)) continue;
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

// ---- Tensor ----

template <typename T>
Tensor<T> Tensor<T>::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->value.assign(shape_numel(n->shape), T(0));
    n->requires_grad = requires_grad;
    n->on_graph = requires_grad;
    Tensor t;
    t.node_ = std::move(n);
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::full(std::vector<std::size_t> shape, T fill, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.value().begin(), t.value().end(), fill);
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::from(std::vector<T> data, std::vector<std::size_t> shape,
                          bool requires_grad) {
    if (data.size() != shape_numel(shape))
        throw ShapeError("Tensor::from: data length does not match shape");
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    n->on_graph = requires_grad;
    Tensor t;
    t.node_ = std::move(n);
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v, bool requires_grad) {
    return from({v}, {}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::rows() const {
    const auto& s = node_->shape;
    if (s.size() >= 2) return s[0];
    return 1;
}

template <typename T>
std::size_t Tensor<T>::cols() const {
    const auto& s = node_->shape;
    if (s.size() >= 2) return s[1];
    if (s.size() == 1) return s[0];
    return 1;
}

template <typename T>
void Tensor<T>::ensure_grad() {
    ensure_grad_of(node_);
}

template <typename T>
void Tensor<T>::zero_grad() {
    node_->grad.clear();
}

template <typename T>
void Tensor<T>::set_requires_grad(bool v) {
    node_->requires_grad = v;
    if (v) node_->on_graph = true;
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item: tensor is not a scalar");
    return node_->value[0];
}

template <typename T>
bool Tensor<T>::has_bad_values() const {
    for (T v : node_->value)
        if (!std::isfinite(static_cast<double>(v))) return true;
    return false;
}

// ---- Tape ----

namespace {
template <typename T>
Tape<T>** tape_slot() {
    thread_local Tape<T>* slot = nullptr;
    return &slot;
}
}  // namespace

template <typename T>
Tape<T>* Tape<T>::active() {
    return *tape_slot<T>();
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
    if (consumed_) throw TapeError("backward: tape already consumed; run forward again");
    if (!loss.defined() || loss.numel() != 1)
        throw ShapeError("backward: loss must be a scalar");
    if (!loss.on_graph())
        throw TapeError("backward: loss was not produced by taped operations");
    loss.node_->grad.assign(1, T(1));
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    consumed_ = true;
}

template <typename T>
void Tape<T>::clear() {
    entries_.clear();
    consumed_ = false;
}

template <typename T>
Tape<T>::Scope::Scope(Tape& t) {
    prev_ = *tape_slot<T>();
    *tape_slot<T>() = &t;
}

template <typename T>
Tape<T>::Scope::~Scope() {
    *tape_slot<T>() = prev_;
}

template <typename T>
Tape<T>::Pause::Pause() {
    prev_ = *tape_slot<T>();
    *tape_slot<T>() = nullptr;
}

template <typename T>
Tape<T>::Pause::~Pause() {
    *tape_slot<T>() = prev_;
}

// ---- op helpers ----

namespace {

template <typename T>
Tensor<T> make_out(std::vector<std::size_t> shape) {
    return Tensor<T>::zeros(std::move(shape));
}

template <typename T>
bool track(const Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* tape = Tape<T>::active();
    if (!tape) return false;
    bool any = false;
    for (const Tensor<T>* t : inputs)
        if ((*t).on_graph()) any = true;
    if (any) out.node_->on_graph = true;
    return any;
}

template <typename T>
void record(std::function<void()> fn) {
    Tape<T>::active()->record(std::move(fn));
}

}  // namespace

// ---- ops ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    Tensor<T> out = make_out<T>(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (track(out, {&a, &b})) {
        record<T>([an = a.node_, bn = b.node_, on = out.node_] {
            if (on->grad.empty()) return;
            if (needs(an)) {
                ensure_grad_of(an);
                for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (needs(bn)) {
                ensure_grad_of(bn);
                for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "sub");
    Tensor<T> out = make_out<T>(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    if (track(out, {&a, &b})) {
        record<T>([an = a.node_, bn = b.node_, on = out.node_] {
            if (on->grad.empty()) return;
            if (needs(an)) {
                ensure_grad_of(an);
                for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (needs(bn)) {
                ensure_grad_of(bn);
                for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mul");
    Tensor<T> out = make_out<T>(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (track(out, {&a, &b})) {
        record<T>([an = a.node_, bn = b.node_, on = out.node_] {
            if (on->grad.empty()) return;
            if (needs(an)) {
                ensure_grad_of(an);
                for (std::size_t i = 0; i < on->grad.size(); ++i)
                    an->grad[i] += on->grad[i] * bn->value[i];
            }
            if (needs(bn)) {
                ensure_grad_of(bn);
                for (std::size_t i = 0; i < on->grad.size(); ++i)
                    bn->grad[i] += on->grad[i] * an->value[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    Tensor<T> out = make_out<T>(a.shape());
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = c * av[i];
    if (track(out, {&a})) {
        record<T>([an = a.node_, on = out.node_, c] {
            if (on->grad.empty() || !needs(an)) return;
            ensure_grad_of(an);
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += c * on->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    Tensor<T> out = make_out<T>(a.shape());
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + c;
    if (track(out, {&a})) {
        record<T>([an = a.node_, on = out.node_] {
            if (on->grad.empty() || !needs(an)) return;
            ensure_grad_of(an);
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& m, const Tensor<T>& v) {
    std::size_t R = m.rows(), C = m.cols();
    if (v.numel() != C) throw ShapeError("add_rowvec: vector length must equal column count");
    Tensor<T> out = make_out<T>(m.shape());
    const auto& mv = m.value();
    const auto& vv = v.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) ov[i * C + j] = mv[i * C + j] + vv[j];
    if (track(out, {&m, &v})) {
        record<T>([mn = m.node_, vn = v.node_, on = out.node_, R, C] {
            if (on->grad.empty()) return;
            if (needs(mn)) {
                ensure_grad_of(mn);
                for (std::size_t i = 0; i < R * C; ++i) mn->grad[i] += on->grad[i];
            }
            if (needs(vn)) {
                ensure_grad_of(vn);
                for (std::size_t i = 0; i < R; ++i)
                    for (std::size_t j = 0; j < C; ++j) vn->grad[j] += on->grad[i * C + j];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2) throw ShapeError("matmul: inner dimensions disagree");
    Tensor<T> out = make_out<T>({m, n});
    mm_nn_acc(a.value().data(), b.value().data(), out.value().data(), m, k, n);
    if (track(out, {&a, &b})) {
        record<T>([an = a.node_, bn = b.node_, on = out.node_, m, k, n] {
            if (on->grad.empty()) return;
            if (needs(an)) {
                ensure_grad_of(an);
                // dA += dC . B^T  (B stored k x n)
                mm_nt_acc(on->grad.data(), bn->value.data(), an->grad.data(), m, n, k);
            }
            if (needs(bn)) {
                ensure_grad_of(bn);
                // dB += A^T . dC  (A stored m x k)
                mm_tn_acc(an->value.data(), on->grad.data(), bn->grad.data(), k, m, n);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    std::size_t R = a.rows(), C = a.cols();
    Tensor<T> out = make_out<T>({C, R});
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) ov[j * R + i] = av[i * C + j];
    if (track(out, {&a})) {
        record<T>([an = a.node_, on = out.node_, R, C] {
            if (on->grad.empty() || !needs(an)) return;
            ensure_grad_of(an);
            for (std::size_t i = 0; i < R; ++i)
                for (std::size_t j = 0; j < C; ++j) an->grad[i * C + j] += on->grad[j * R + i];
        });
    }
    return out;
}

namespace {

// Row softmax with max subtraction; shared by forward paths.
template <typename T>
void row_softmax_values(const std::vector<T>& in, std::vector<T>& out, std::size_t R,
                        std::size_t C) {
    for (std::size_t i = 0; i < R; ++i) {
        const T* x = in.data() + i * C;
        T* y = out.data() + i * C;
        T mx = x[0];
        for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            double e = std::exp(static_cast<double>(x[j] - mx));
            y[j] = static_cast<T>(e);
            s += e;
        }
        if (!std::isfinite(s) || s <= 0.0)
            throw NumericError("softmax: non-finite input");
        T inv = static_cast<T>(1.0 / s);
        for (std::size_t j = 0; j < C; ++j) y[j] *= inv;
    }
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    if (x.rank() <= 1) axis = 1;  // single row
    if (axis == 0) {
        // Column softmax via the differentiable transpose path.
        return transpose(softmax(transpose(x), 1));
    }
    std::size_t R = x.rows(), C = x.cols();
    Tensor<T> out = make_out<T>(x.shape());
    row_softmax_values(x.value(), out.value(), R, C);
    if (track(out, {&x})) {
        record<T>([xn = x.node_, on = out.node_, R, C] {
            if (on->grad.empty() || !needs(xn)) return;
            ensure_grad_of(xn);
            for (std::size_t i = 0; i < R; ++i) {
                const T* y = on->value.data() + i * C;
                const T* g = on->grad.data() + i * C;
                T* dx = xn->grad.data() + i * C;
                double dot = 0.0;
                for (std::size_t j = 0; j < C; ++j) dot += static_cast<double>(g[j]) * y[j];
                for (std::size_t j = 0; j < C; ++j)
                    dx[j] += y[j] * (g[j] - static_cast<T>(dot));
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
    if (eps <= T(0)) throw ConfigError("layer_norm: eps must be positive");
    std::size_t R = x.rows(), C = x.cols();
    if (C < 1) throw ShapeError("layer_norm: normalized axis is empty");
    if (gain.numel() != C || bias.numel() != C)
        throw ShapeError("layer_norm: gain/bias length must equal column count");
    Tensor<T> out = make_out<T>(x.shape());
    // Save normalized rows and inverse stddev for backward.
    auto xhat = std::make_shared<std::vector<T>>(R * C);
    auto inv_std = std::make_shared<std::vector<T>>(R);
    const auto& xv = x.value();
    const auto& gv = gain.value();
    const auto& bv = bias.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < R; ++i) {
        const T* row = xv.data() + i * C;
        double mu = 0.0;
        for (std::size_t j = 0; j < C; ++j) mu += row[j];
        mu /= C;
        double var = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            double d = row[j] - mu;
            var += d * d;
        }
        var /= C;
        double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
        (*inv_std)[i] = static_cast<T>(is);
        for (std::size_t j = 0; j < C; ++j) {
            T xh = static_cast<T>((row[j] - mu) * is);
            (*xhat)[i * C + j] = xh;
            ov[i * C + j] = gv[j] * xh + bv[j];
        }
    }
    if (track(out, {&x, &gain, &bias})) {
        record<T>([xn = x.node_, gn = gain.node_, bn = bias.node_, on = out.node_, xhat,
                   inv_std, R, C] {
            if (on->grad.empty()) return;
            bool nx = needs(xn), ng = needs(gn), nb = needs(bn);
            if (nx) ensure_grad_of(xn);
            if (ng) ensure_grad_of(gn);
            if (nb) ensure_grad_of(bn);
            for (std::size_t i = 0; i < R; ++i) {
                const T* g = on->grad.data() + i * C;
                const T* xh = xhat->data() + i * C;
                T is = (*inv_std)[i];
                if (ng || nb) {
                    for (std::size_t j = 0; j < C; ++j) {
                        if (ng) gn->grad[j] += g[j] * xh[j];
                        if (nb) bn->grad[j] += g[j];
                    }
                }
                if (nx) {
                    double sum_dl = 0.0, sum_dlxh = 0.0;
                    for (std::size_t j = 0; j < C; ++j) {
                        double dl = static_cast<double>(g[j]) * gn->value[j];
                        sum_dl += dl;
                        sum_dlxh += dl * xh[j];
                    }
                    for (std::size_t j = 0; j < C; ++j) {
                        double dl = static_cast<double>(g[j]) * gn->value[j];
                        double dx = (dl - sum_dl / C - xh[j] * sum_dlxh / C) * is;
                        xn->grad[i * C + j] += static_cast<T>(dx);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        const std::vector<std::uint8_t>& mask) {
    std::size_t R = logits.rows(), V = logits.cols();
    if (targets.size() != R || mask.size() != R)
        throw ShapeError("cross_entropy: targets/mask length must equal row count");
    std::size_t n_active = 0;
    for (std::size_t i = 0; i < R; ++i) {
        if (!mask[i]) continue;
        ++n_active;
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= V)
            throw IndexError("cross_entropy: target id out of range");
    }
    if (n_active == 0) throw MeanError("cross_entropy: all positions masked");

    auto probs = std::make_shared<std::vector<T>>(R * V);
    row_softmax_values(logits.value(), *probs, R, V);
    double loss = 0.0;
    for (std::size_t i = 0; i < R; ++i) {
        if (!mask[i]) continue;
        double p = static_cast<double>((*probs)[i * V + targets[i]]);
        loss -= std::log(std::max(p, 1e-300));
    }
    loss /= static_cast<double>(n_active);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss));
    if (track(out, {&logits})) {
        record<T>([ln = logits.node_, on = out.node_, probs, targets, mask, R, V, n_active] {
            if (on->grad.empty() || !needs(ln)) return;
            ensure_grad_of(ln);
            T g = on->grad[0] / static_cast<T>(n_active);
            for (std::size_t i = 0; i < R; ++i) {
                if (!mask[i]) continue;
                const T* p = probs->data() + i * V;
                T* dl = ln->grad.data() + i * V;
                for (std::size_t j = 0; j < V; ++j) dl[j] += g * p[j];
                dl[targets[i]] -= g;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids) {
    std::size_t V = table.rows(), D = table.cols();
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= V)
            throw IndexError("embedding_lookup: id out of range");
    Tensor<T> out = make_out<T>({ids.size(), D});
    const auto& tv = table.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::memcpy(ov.data() + i * D, tv.data() + static_cast<std::size_t>(ids[i]) * D,
                    D * sizeof(T));
    if (track(out, {&table})) {
        record<T>([tn = table.node_, on = out.node_, ids, D] {
            if (on->grad.empty() || !needs(tn)) return;
            ensure_grad_of(tn);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const T* g = on->grad.data() + i * D;
                T* dst = tn->grad.data() + static_cast<std::size_t>(ids[i]) * D;
                for (std::size_t j = 0; j < D; ++j) dst[j] += g[j];
            }
        });
    }
    return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> out = make_out<T>(x.shape());
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        double v = xv[i];
        double u = kGeluC * (v + kGeluA * v * v * v);
        ov[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(u)));
    }
    if (track(out, {&x})) {
        record<T>([xn = x.node_, on = out.node_] {
            if (on->grad.empty() || !needs(xn)) return;
            ensure_grad_of(xn);
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                double v = xn->value[i];
                double u = kGeluC * (v + kGeluA * v * v * v);
                double t = std::tanh(u);
                double sech2 = 1.0 - t * t;
                double d = 0.5 * (1.0 + t) + 0.5 * v * sech2 * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
                xn->grad[i] += static_cast<T>(static_cast<double>(on->grad[i]) * d);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out = make_out<T>(x.shape());
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
    if (track(out, {&x})) {
        record<T>([xn = x.node_, on = out.node_] {
            if (on->grad.empty() || !needs(xn)) return;
            ensure_grad_of(xn);
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                if (xn->value[i] > T(0)) xn->grad[i] += on->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    double s = 0.0;
    for (T v : x.value()) s += v;
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s));
    if (track(out, {&x})) {
        record<T>([xn = x.node_, on = out.node_] {
            if (on->grad.empty() || !needs(xn)) return;
            ensure_grad_of(xn);
            for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[0];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    if (x.numel() == 0) throw MeanError("mean_all: empty tensor");
    double s = 0.0;
    for (T v : x.value()) s += v;
    std::size_t n = x.numel();
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s / n));
    if (track(out, {&x})) {
        record<T>([xn = x.node_, on = out.node_, n] {
            if (on->grad.empty() || !needs(xn)) return;
            ensure_grad_of(xn);
            T g = on->grad[0] / static_cast<T>(n);
            for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t r0, std::size_t r1) {
    std::size_t R = x.rows(), C = x.cols();
    if (r0 > r1 || r1 > R) throw IndexError("slice_rows: range out of bounds");
    Tensor<T> out = make_out<T>({r1 - r0, C});
    std::memcpy(out.value().data(), x.value().data() + r0 * C, (r1 - r0) * C * sizeof(T));
    if (track(out, {&x})) {
        record<T>([xn = x.node_, on = out.node_, r0, C] {
            if (on->grad.empty() || !needs(xn)) return;
            ensure_grad_of(xn);
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                xn->grad[r0 * C + i] += on->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t c0, std::size_t c1) {
    std::size_t R = x.rows(), C = x.cols();
    if (c0 > c1 || c1 > C) throw IndexError("slice_cols: range out of bounds");
    std::size_t W = c1 - c0;
    Tensor<T> out = make_out<T>({R, W});
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < R; ++i)
        std::memcpy(ov.data() + i * W, xv.data() + i * C + c0, W * sizeof(T));
    if (track(out, {&x})) {
        record<T>([xn = x.node_, on = out.node_, c0, R, C, W] {
            if (on->grad.empty() || !needs(xn)) return;
            ensure_grad_of(xn);
            for (std::size_t i = 0; i < R; ++i)
                for (std::size_t j = 0; j < W; ++j)
                    xn->grad[i * C + c0 + j] += on->grad[i * W + j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    std::size_t R = parts[0].rows(), C = 0;
    for (const auto& p : parts) {
        if (p.rows() != R) throw ShapeError("concat_cols: row counts differ");
        C += p.cols();
    }
    Tensor<T> out = make_out<T>({R, C});
    auto& ov = out.value();
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::size_t W = p.cols();
        for (std::size_t i = 0; i < R; ++i)
            std::memcpy(ov.data() + i * C + off, p.value().data() + i * W, W * sizeof(T));
        off += W;
    }
    bool any = false;
    for (const auto& p : parts)
        if (p.on_graph()) any = true;
    if (Tape<T>::active() && any) {
        out.node_->on_graph = true;
        std::vector<std::shared_ptr<TensorNode<T>>> nodes;
        std::vector<std::size_t> widths;
        for (const auto& p : parts) {
            nodes.push_back(p.node_);
            widths.push_back(p.cols());
        }
        record<T>([nodes, widths, on = out.node_, R, C] {
            if (on->grad.empty()) return;
            std::size_t off = 0;
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                std::size_t W = widths[k];
                if (needs(nodes[k])) {
                    ensure_grad_of(nodes[k]);
                    for (std::size_t i = 0; i < R; ++i)
                        for (std::size_t j = 0; j < W; ++j)
                            nodes[k]->grad[i * W + j] += on->grad[i * C + off + j];
                }
                off += W;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    std::size_t C = parts[0].cols(), R = 0;
    for (const auto& p : parts) {
        if (p.cols() != C) throw ShapeError("concat_rows: column counts differ");
        R += p.rows();
    }
    Tensor<T> out = make_out<T>({R, C});
    auto& ov = out.value();
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::memcpy(ov.data() + off, p.value().data(), p.numel() * sizeof(T));
        off += p.numel();
    }
    bool any = false;
    for (const auto& p : parts)
        if (p.on_graph()) any = true;
    if (Tape<T>::active() && any) {
        out.node_->on_graph = true;
        std::vector<std::shared_ptr<TensorNode<T>>> nodes;
        std::vector<std::size_t> sizes;
        for (const auto& p : parts) {
            nodes.push_back(p.node_);
            sizes.push_back(p.numel());
        }
        record<T>([nodes, sizes, on = out.node_] {
            if (on->grad.empty()) return;
            std::size_t off = 0;
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                if (needs(nodes[k])) {
                    ensure_grad_of(nodes[k]);
                    for (std::size_t i = 0; i < sizes[k]; ++i)
                        nodes[k]->grad[i] += on->grad[off + i];
                }
                off += sizes[k];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x) {
    double ss = 0.0;
    for (T v : x.value()) ss += static_cast<double>(v) * v;
    double n = std::sqrt(ss);
    if (n < 1e-12) throw NormalizationError("l2_normalize: zero-norm input");
    Tensor<T> out = make_out<T>(x.shape());
    T inv = static_cast<T>(1.0 / n);
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * inv;
    if (track(out, {&x})) {
        record<T>([xn = x.node_, on = out.node_, n] {
            if (on->grad.empty() || !needs(xn)) return;
            ensure_grad_of(xn);
            double xg = 0.0;
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                xg += static_cast<double>(xn->value[i]) * on->grad[i];
            double inv = 1.0 / n, inv3 = xg / (n * n * n);
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                xn->grad[i] += static_cast<T>(on->grad[i] * inv - xn->value[i] * inv3);
        });
    }
    return out;
}

template <typename T>
Tensor<T> rsqrt(const Tensor<T>& x) {
    Tensor<T> out = make_out<T>(x.shape());
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        if (xv[i] <= T(0)) throw NumericError("rsqrt: domain requires positive input");
        ov[i] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(xv[i])));
    }
    if (track(out, {&x})) {
        record<T>([xn = x.node_, on = out.node_] {
            if (on->grad.empty() || !needs(xn)) return;
            ensure_grad_of(xn);
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                double y = on->value[i];
                xn->grad[i] += static_cast<T>(-0.5 * y * y * y * on->grad[i]);
            }
        });
    }
    return out;
}

// ---- explicit instantiations ----

#define STEERKIT_INSTANTIATE(T)                                                              \
    template class Tensor<T>;                                                                \
    template class Tape<T>;                                                                  \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> scale(const Tensor<T>&, T);                                           \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                      \
    template Tensor<T> add_rowvec(const Tensor<T>&, const Tensor<T>&);                       \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> transpose(const Tensor<T>&);                                          \
    template Tensor<T> softmax(const Tensor<T>&, int);                                       \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);  \
    template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<int>&,              \
                                     const std::vector<std::uint8_t>&);                      \
    template Tensor<T> embedding_lookup(const Tensor<T>&, const std::vector<int>&);          \
    template Tensor<T> gelu(const Tensor<T>&);                                               \
    template Tensor<T> relu(const Tensor<T>&);                                               \
    template Tensor<T> sum(const Tensor<T>&);                                                \
    template Tensor<T> mean_all(const Tensor<T>&);                                           \
    template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);               \
    template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);               \
    template Tensor<T> concat_cols(std::span<const Tensor<T>>);                              \
    template Tensor<T> concat_rows(std::span<const Tensor<T>>);                              \
    template Tensor<T> l2_normalize(const Tensor<T>&);                                       \
    template Tensor<T> rsqrt(const Tensor<T>&);

STEERKIT_INSTANTIATE(float)
STEERKIT_INSTANTIATE(double)

#undef STEERKIT_INSTANTIATE

}  // namespace steerkit
