// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "histost/numerics/params.hpp"
#include "histost/numerics/tensor.hpp"

/**
 * @file autodiff.hpp
 *
 * Tape-based reverse-mode differentiation over dense double tensors.
 *
 * Every op appends one node to the tape holding its output value, the ids of
 * its inputs and a closure that pushes the output gradient back to them.
 * `Tape::backward` walks nodes in reverse creation order, which is a reverse
 * topological order because inputs always precede their consumers. Each node
 * is visited once, so gradient accumulation order is fixed by construction.
 *
 * Nodes that do not depend on any trainable leaf are marked constant and
 * receive no gradient buffer; frozen parameters are bound as constants.
 */

namespace histost::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Tensor& grad() const;
    const Tensor::Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

/// Gradients with respect to bound parameters, in binding order.
class Gradients {
public:
    void add(const Parameter* p, Tensor g) { entries_.emplace_back(p, std::move(g)); }
    /// Null when the parameter was not bound or is frozen.
    const Tensor* find(const Parameter& p) const;
    /// Throws LookupError when absent.
    const Tensor& at(const Parameter& p) const;
    std::size_t size() const { return entries_.size(); }
    const std::vector<std::pair<const Parameter*, Tensor>>& entries() const { return entries_; }

private:
    std::vector<std::pair<const Parameter*, Tensor>> entries_;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Value that never receives a gradient.
    Var constant(Tensor value);
    /// Input leaf; gradient retrievable via `grad()` after backward.
    Var input(Tensor value, bool requires_grad = true);
    /// Bind a parameter. Binding the same parameter twice returns the same
    /// node. Frozen parameters are bound as constants.
    Var param(Parameter& p);

    /// Append an op node. `inputs` are node ids; `fn` may be empty when no
    /// input requires a gradient.
    Var push(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    /// Gradient of the last backward's loss w.r.t. node `id`; zero tensor if
    /// the node received none.
    const Tensor& grad(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    const char* op_name(std::size_t id) const { return nodes_[id].op; }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient buffer for accumulation inside backward closures.
    Tensor& grad_buffer(std::size_t id);

    /// Reverse-mode sweep from a scalar loss. Checks every forward value up
    /// to `loss` for NaN/Inf first and names the first offending node.
    Gradients backward(Var loss);

private:
    struct Node {
        const char* op;
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        const Parameter* param = nullptr;
    };

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> bound_;
    Tensor zero_scalar_;
    mutable std::vector<Tensor> zero_cache_;
};

/// Runs reverse mode for `loss` on its tape.
Gradients forward_backward(Tape& tape, Var loss);

// ---------------------------------------------------------------------------
// Primitive ops. All shapes are checked; mismatches throw ContractViolation.

Var matmul(Var a, Var b);                  ///< [m,k]x[k,n]
Var matmul_nt(Var a, Var b);               ///< [m,k]x[n,k]^T
Var transpose(Var a);                      ///< [m,n] -> [n,m]
Var add(Var a, Var b);                     ///< same shape
Var sub(Var a, Var b);                     ///< same shape
Var mul(Var a, Var b);                     ///< elementwise, same shape
Var add_rowvec(Var x, Var b);              ///< [m,n] + [n] broadcast over rows
Var scale(Var a, double s);
Var add_const(Var a, const Tensor& c);     ///< a + c, c carries no gradient
Var mul_const(Var a, const Tensor& c);     ///< a * c elementwise
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);  ///< row-wise
Var softmax_rows(Var x);
Var gelu(Var x);                           ///< exact (erf) form
Var tanh(Var x);
Var exp(Var x);
Var log(Var x);
Var abs(Var x);                            ///< subgradient +1 at 0 (right derivative)
Var square(Var x);
Var sum(Var x);                            ///< -> scalar
Var mean(Var x);                           ///< -> scalar
Var reshape(Var x, Tensor::Shape shape);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var detach(Var x);

}  // namespace histost::ad
