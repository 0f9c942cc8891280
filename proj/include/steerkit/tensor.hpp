#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "steerkit/errors.hpp"

namespace steerkit {

// Matmul FLOP accounting. A single active counter; the matmul kernels add
// 2*m*n*k whenever one is installed. Forward and backward products both go
// through the kernels, so a training step's count includes the backward pass.
namespace flops {
void set_counter(std::uint64_t* counter);  // nullptr disables accounting
std::uint64_t* counter();
inline constexpr double kPerTeraflop = 1e12;
}  // namespace flops

template <typename T>
struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until a backward pass touches this node
    bool requires_grad = false;
    bool on_graph = false;
};

// Shared-handle tensor. Copies alias the same storage; ops produce fresh
// nodes. Values are immutable once created except through the optimizer and
// explicit mutable accessors.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, T fill, bool requires_grad = false);
    static Tensor from(std::vector<T> data, std::vector<std::size_t> shape,
                       bool requires_grad = false);
    static Tensor scalar(T v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t rank() const { return node_->shape.size(); }
    // 2D helpers; a 1D tensor is treated as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    std::vector<T>& value() { return node_->value; }
    const std::vector<T>& value() const { return node_->value; }
    std::vector<T>& grad() { return node_->grad; }
    const std::vector<T>& grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void ensure_grad();   // allocate zero gradient storage
    void zero_grad();     // drop gradient storage

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v);
    bool on_graph() const { return node_ && node_->on_graph; }

    T item() const;

    // True if any entry is NaN or Inf.
    bool has_bad_values() const;

    std::shared_ptr<TensorNode<T>> node_;

private:
    explicit Tensor(std::shared_ptr<TensorNode<T>> n) : node_(std::move(n)) {}
};

// Ordered record of differentiable operations. Ops record themselves on the
// active tape; backward replays entries in exact reverse execution order.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }
    std::size_t size() const { return entries_.size(); }
    bool consumed() const { return consumed_; }

    // Seeds d(loss)/d(loss) = 1 and replays entries in reverse. Throws
    // TapeError on a second backward without a fresh forward.
    void backward(const Tensor<T>& loss);

    // Frees all saved intermediates and re-arms the tape.
    void clear();

    static Tape* active();

    // RAII activation for a lexical scope.
    class Scope {
    public:
        explicit Scope(Tape& t);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    // Temporarily deactivates any tape (clean passes inside a training step).
    class Pause {
    public:
        Pause();
        ~Pause();
        Pause(const Pause&) = delete;
        Pause& operator=(const Pause&) = delete;

    private:
        Tape* prev_;
    };

private:
    std::vector<std::function<void()>> entries_;
    bool consumed_ = false;
};

// ---- differentiable ops ----
// All ops compute eagerly and, when a tape is active and an input is on the
// graph, record a backward closure. Gradients flow through nodes regardless
// of requires_grad; only the flag decides whether a leaf accumulates .grad.

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T c);
// m[R x C] + v[C] broadcast over rows; dv accumulates the row sum.
template <typename T> Tensor<T> add_rowvec(const Tensor<T>& m, const Tensor<T>& v);

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

// Softmax along `axis` (2D: 0 = columns, 1 = rows; 1D: axis 0). Max-subtracted.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

// Mean NLL over unmasked positions. mask[i] != 0 selects position i.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        const std::vector<std::uint8_t>& mask);

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids);

template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean_all(const Tensor<T>& x);

template <typename T> Tensor<T> slice_rows(const Tensor<T>& x, std::size_t r0, std::size_t r1);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t c0, std::size_t c1);
template <typename T> Tensor<T> concat_cols(std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> concat_rows(std::span<const Tensor<T>> parts);

// x / ||x||_2 over the whole tensor. Throws NormalizationError on zero norm.
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& x);
// Elementwise 1/sqrt(x); domain x > 0.
template <typename T> Tensor<T> rsqrt(const Tensor<T>& x);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace steerkit
