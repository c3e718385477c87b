// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "histost/common/errors.hpp"
#include "histost/numerics/autodiff.hpp"

namespace histost::ad {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const MatR>;
using MMap = Eigen::Map<MatR>;

CMap cmap(const Tensor& t, std::size_t r, std::size_t c) {
    return CMap(t.data().data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MMap mmap(Tensor& t, std::size_t r, std::size_t c) {
    return MMap(t.data().data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

Tape& same_tape(Var a, Var b) {
    HISTOST_REQUIRE(a.tape != nullptr && a.tape == b.tape, "vars belong to different tapes");
    return *a.tape;
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.ndim() != 2) throw ContractViolation(std::string(op) + ": expected a matrix, got shape " + t.shape_string());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ContractViolation(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
}

template <class F, class DF>
Var unary(const char* op, Var x, F f, DF df) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    Tensor y(xv.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
    Tape::BackwardFn fn;
    if (t.requires_grad(x.id)) {
        fn = [xid = x.id, df](Tape& tp, std::size_t self) {
            const Tensor& gy = tp.grad(self);
            const Tensor& xs = tp.value(xid);
            const Tensor& ys = tp.value(self);
            Tensor& gx = tp.grad_buffer(xid);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xs[i], ys[i]);
        };
    }
    return t.push(op, std::move(y), {x.id}, std::move(fn));
}

}  // namespace

// ---------------------------------------------------------------------------

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }

const Tensor* Gradients::find(const Parameter& p) const {
    for (const auto& [param, g] : entries_)
        if (param == &p) return &g;
    return nullptr;
}

const Tensor& Gradients::at(const Parameter& p) const {
    if (const auto* g = find(p)) return *g;
    throw LookupError("no gradient for parameter " + p.name);
}

Var Tape::push(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    bool rg = false;
    for (auto in : inputs) rg = rg || nodes_[in].requires_grad;
    n.requires_grad = rg && static_cast<bool>(fn);
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::input(Tensor value, bool requires_grad) {
    Node n;
    n.op = "input";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var{this, it->second};
    Node n;
    n.op = "param";
    n.value = p.value;
    n.requires_grad = p.trainable;
    n.param = &p;
    nodes_.push_back(std::move(n));
    bound_.emplace(&p, nodes_.size() - 1);
    return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape(), 0.0);
        n.has_grad = true;
    }
    return n.grad;
}

const Tensor& Tape::grad(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.has_grad) return n.grad;
    if (zero_cache_.size() < nodes_.size()) zero_cache_.resize(nodes_.size());
    Tensor& z = zero_cache_[id];
    if (!z.same_shape(n.value)) z = Tensor(n.value.shape(), 0.0);
    return z;
}

Gradients Tape::backward(Var loss) {
    HISTOST_REQUIRE(loss.tape == this, "loss is not on this tape");
    if (nodes_[loss.id].value.size() != 1) {
        throw ContractViolation("backward: loss must be scalar, got shape " + nodes_[loss.id].value.shape_string());
    }
    for (std::size_t i = 0; i <= loss.id; ++i) {
        for (double v : nodes_[i].value.data()) {
            if (!std::isfinite(v)) {
                throw NumericalError("non-finite forward value at node #" + std::to_string(i) + " (" +
                                     nodes_[i].op + (nodes_[i].param ? " " + nodes_[i].param->name : std::string()) +
                                     ")");
            }
        }
    }
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor();
    }
    grad_buffer(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad || !n.requires_grad || !n.backward) continue;
        n.backward(*this, i);
    }
    Gradients out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.param == nullptr || !n.requires_grad) continue;
        out.add(n.param, n.has_grad ? n.grad : Tensor(n.value.shape(), 0.0));
    }
    return out;
}

Gradients forward_backward(Tape& tape, Var loss) { return tape.backward(loss); }

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
    Tape& t = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_matrix(av, "matmul");
    require_matrix(bv, "matmul");
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    if (bv.rows() != k) throw ContractViolation("matmul: inner dims " + av.shape_string() + " x " + bv.shape_string());
    Tensor c(Tensor::Shape{m, n});
    mmap(c, m, n).noalias() = cmap(av, m, k) * cmap(bv, k, n);
    return t.push("matmul", std::move(c), {a.id, b.id}, [aid = a.id, bid = b.id, m, k, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(aid)) mmap(tp.grad_buffer(aid), m, k).noalias() += cmap(g, m, n) * cmap(tp.value(bid), k, n).transpose();
        if (tp.requires_grad(bid)) mmap(tp.grad_buffer(bid), k, n).noalias() += cmap(tp.value(aid), m, k).transpose() * cmap(g, m, n);
    });
}

Var matmul_nt(Var a, Var b) {
    Tape& t = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_matrix(av, "matmul_nt");
    require_matrix(bv, "matmul_nt");
    const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
    if (bv.cols() != k) throw ContractViolation("matmul_nt: inner dims " + av.shape_string() + " x " + bv.shape_string() + "^T");
    Tensor c(Tensor::Shape{m, n});
    mmap(c, m, n).noalias() = cmap(av, m, k) * cmap(bv, n, k).transpose();
    return t.push("matmul_nt", std::move(c), {a.id, b.id}, [aid = a.id, bid = b.id, m, k, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(aid)) mmap(tp.grad_buffer(aid), m, k).noalias() += cmap(g, m, n) * cmap(tp.value(bid), n, k);
        if (tp.requires_grad(bid)) mmap(tp.grad_buffer(bid), n, k).noalias() += cmap(g, m, n).transpose() * cmap(tp.value(aid), m, k);
    });
}

Var transpose(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = a.value();
    require_matrix(av, "transpose");
    const std::size_t m = av.rows(), n = av.cols();
    Tensor c(Tensor::Shape{n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[j * m + i] = av[i * n + j];
    return t.push("transpose", std::move(c), {a.id}, [aid = a.id, m, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad_buffer(aid);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
}

Var add(Var a, Var b) {
    Tape& t = same_tape(a, b);
    require_same_shape(a.value(), b.value(), "add");
    Tensor c = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += bv[i];
    return t.push("add", std::move(c), {a.id, b.id}, [aid = a.id, bid = b.id](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        for (auto id : {aid, bid}) {
            if (!tp.requires_grad(id)) continue;
            Tensor& gi = tp.grad_buffer(id);
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
        }
    });
}

Var sub(Var a, Var b) {
    Tape& t = same_tape(a, b);
    require_same_shape(a.value(), b.value(), "sub");
    Tensor c = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= bv[i];
    return t.push("sub", std::move(c), {a.id, b.id}, [aid = a.id, bid = b.id](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(aid)) {
            Tensor& ga = tp.grad_buffer(aid);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
        }
        if (tp.requires_grad(bid)) {
            Tensor& gb = tp.grad_buffer(bid);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b) {
    Tape& t = same_tape(a, b);
    require_same_shape(a.value(), b.value(), "mul");
    Tensor c = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= bv[i];
    return t.push("mul", std::move(c), {a.id, b.id}, [aid = a.id, bid = b.id](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(aid)) {
            const Tensor& bv2 = tp.value(bid);
            Tensor& ga = tp.grad_buffer(aid);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv2[i];
        }
        if (tp.requires_grad(bid)) {
            const Tensor& av2 = tp.value(aid);
            Tensor& gb = tp.grad_buffer(bid);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av2[i];
        }
    });
}

Var add_rowvec(Var x, Var b) {
    Tape& t = same_tape(x, b);
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    require_matrix(xv, "add_rowvec");
    const std::size_t m = xv.rows(), n = xv.cols();
    if (bv.size() != n) throw ContractViolation("add_rowvec: bias length " + std::to_string(bv.size()) + " vs " + std::to_string(n) + " columns");
    Tensor c = xv;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += bv[j];
    return t.push("add_rowvec", std::move(c), {x.id, b.id}, [xid = x.id, bid = b.id, m, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(xid)) {
            Tensor& gx = tp.grad_buffer(xid);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
        }
        if (tp.requires_grad(bid)) {
            Tensor& gb = tp.grad_buffer(bid);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
    });
}

Var scale(Var a, double s) {
    return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_const(Var a, const Tensor& c) {
    Tape& t = *a.tape;
    require_same_shape(a.value(), c, "add_const");
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += c[i];
    return t.push("add_const", std::move(y), {a.id}, [aid = a.id](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad_buffer(aid);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
}

Var mul_const(Var a, const Tensor& c) {
    Tape& t = *a.tape;
    require_same_shape(a.value(), c, "mul_const");
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= c[i];
    return t.push("mul_const", std::move(y), {a.id}, [aid = a.id, c](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad_buffer(aid);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * c[i];
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    Tape& t = same_tape(x, gamma);
    same_tape(x, beta);
    const Tensor& xv = x.value();
    require_matrix(xv, "layer_norm");
    const std::size_t m = xv.rows(), n = xv.cols();
    HISTOST_REQUIRE(gamma.value().size() == n && beta.value().size() == n, "layer_norm: affine parameter length mismatch");
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    Tensor y(xv.shape());
    std::vector<double> rstd(m);
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xv[i * n + j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = xv[i * n + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        rstd[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] = (xv[i * n + j] - mu) * rstd[i] * gv[j] + bv[j];
    }
    return t.push("layer_norm", std::move(y), {x.id, gamma.id, beta.id},
                  [xid = x.id, gid = gamma.id, bid = beta.id, m, n, rstd = std::move(rstd)](Tape& tp, std::size_t self) {
                      const Tensor& g = tp.grad(self);
                      const Tensor& xs = tp.value(xid);
                      const Tensor& gs = tp.value(gid);
                      std::vector<double> xhat(n), dxhat(n);
                      Tensor* gx = tp.requires_grad(xid) ? &tp.grad_buffer(xid) : nullptr;
                      Tensor* gg = tp.requires_grad(gid) ? &tp.grad_buffer(gid) : nullptr;
                      Tensor* gb = tp.requires_grad(bid) ? &tp.grad_buffer(bid) : nullptr;
                      for (std::size_t i = 0; i < m; ++i) {
                          double mu = 0.0;
                          for (std::size_t j = 0; j < n; ++j) mu += xs[i * n + j];
                          mu /= static_cast<double>(n);
                          double mean_dx = 0.0, mean_dx_xhat = 0.0;
                          for (std::size_t j = 0; j < n; ++j) {
                              xhat[j] = (xs[i * n + j] - mu) * rstd[i];
                              dxhat[j] = g[i * n + j] * gs[j];
                              mean_dx += dxhat[j];
                              mean_dx_xhat += dxhat[j] * xhat[j];
                              if (gg) (*gg)[j] += g[i * n + j] * xhat[j];
                              if (gb) (*gb)[j] += g[i * n + j];
                          }
                          if (!gx) continue;
                          mean_dx /= static_cast<double>(n);
                          mean_dx_xhat /= static_cast<double>(n);
                          for (std::size_t j = 0; j < n; ++j)
                              (*gx)[i * n + j] += rstd[i] * (dxhat[j] - mean_dx - xhat[j] * mean_dx_xhat);
                      }
                  });
}

Var softmax_rows(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    require_matrix(xv, "softmax_rows");
    const std::size_t m = xv.rows(), n = xv.cols();
    Tensor y(xv.shape());
    for (std::size_t i = 0; i < m; ++i) {
        double mx = xv[i * n];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[i * n + j]);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            y[i * n + j] = std::exp(xv[i * n + j] - mx);
            s += y[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] /= s;
    }
    return t.push("softmax_rows", std::move(y), {x.id}, [xid = x.id, m, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& ys = tp.value(self);
        Tensor& gx = tp.grad_buffer(xid);
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * ys[i * n + j];
            for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += ys[i * n + j] * (g[i * n + j] - dot);
        }
    });
}

Var gelu(Var x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [inv_sqrt_2pi](double v, double) {
            return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        });
}

Var tanh(Var x) {
    return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var x) {
    return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
    return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var abs(Var x) {
    return unary("abs", x, [](double v) { return std::fabs(v); }, [](double v, double) { return v >= 0.0 ? 1.0 : -1.0; });
}

Var square(Var x) {
    return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sum(Var x) {
    Tape& t = *x.tape;
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return t.push("sum", Tensor::scalar(s), {x.id}, [xid = x.id](Tape& tp, std::size_t self) {
        const double g = tp.grad(self)[0];
        Tensor& gx = tp.grad_buffer(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var reshape(Var x, Tensor::Shape shape) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    if (shape_size(shape) != xv.size()) throw ContractViolation("reshape: size mismatch for " + xv.shape_string());
    Tensor y(std::move(shape), xv.storage());
    return t.push("reshape", std::move(y), {x.id}, [xid = x.id](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_buffer(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    require_matrix(xv, "slice_rows");
    const std::size_t n = xv.cols();
    HISTOST_REQUIRE(count > 0 && begin + count <= xv.rows(), "slice_rows: range out of bounds");
    Tensor y(Tensor::Shape{count, n});
    std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * n), count * n, y.data().begin());
    return t.push("slice_rows", std::move(y), {x.id}, [xid = x.id, begin, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_buffer(xid);
        for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
    });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    require_matrix(xv, "slice_cols");
    const std::size_t m = xv.rows(), n = xv.cols();
    HISTOST_REQUIRE(count > 0 && begin + count <= n, "slice_cols: range out of bounds");
    Tensor y(Tensor::Shape{m, count});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) y[i * count + j] = xv[i * n + begin + j];
    return t.push("slice_cols", std::move(y), {x.id}, [xid = x.id, begin, count, m, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_buffer(xid);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < count; ++j) gx[i * n + begin + j] += g[i * count + j];
    });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    require_matrix(xv, "gather_rows");
    HISTOST_REQUIRE(!rows.empty(), "gather_rows: empty index list");
    const std::size_t n = xv.cols();
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    Tensor y(Tensor::Shape{idx.size(), n});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        HISTOST_REQUIRE(idx[r] < xv.rows(), "gather_rows: index out of range");
        std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * n), n,
                    y.data().begin() + static_cast<std::ptrdiff_t>(r * n));
    }
    return t.push("gather_rows", std::move(y), {x.id}, [xid = x.id, idx = std::move(idx), n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_buffer(xid);
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < n; ++j) gx[idx[r] * n + j] += g[r * n + j];
    });
}

Var concat_rows(std::span<const Var> parts) {
    HISTOST_REQUIRE(!parts.empty(), "concat_rows: no inputs");
    Tape& t = *parts[0].tape;
    const std::size_t n = parts[0].value().cols();
    std::size_t m = 0;
    std::vector<std::size_t> ids, offsets;
    for (const auto& p : parts) {
        same_tape(parts[0], p);
        require_matrix(p.value(), "concat_rows");
        HISTOST_REQUIRE(p.value().cols() == n, "concat_rows: column count mismatch");
        ids.push_back(p.id);
        offsets.push_back(m);
        m += p.value().rows();
    }
    Tensor y(Tensor::Shape{m, n});
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& pv = parts[k].value();
        std::copy(pv.data().begin(), pv.data().end(), y.data().begin() + static_cast<std::ptrdiff_t>(offsets[k] * n));
    }
    auto inputs = ids;
    return t.push("concat_rows", std::move(y), std::move(inputs), [ids, offsets, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!tp.requires_grad(ids[k])) continue;
            Tensor& gk = tp.grad_buffer(ids[k]);
            for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[offsets[k] * n + i];
        }
    });
}

Var concat_cols(std::span<const Var> parts) {
    HISTOST_REQUIRE(!parts.empty(), "concat_cols: no inputs");
    Tape& t = *parts[0].tape;
    const std::size_t m = parts[0].value().rows();
    std::size_t n = 0;
    std::vector<std::size_t> ids, offsets, widths;
    for (const auto& p : parts) {
        same_tape(parts[0], p);
        require_matrix(p.value(), "concat_cols");
        HISTOST_REQUIRE(p.value().rows() == m, "concat_cols: row count mismatch");
        ids.push_back(p.id);
        offsets.push_back(n);
        widths.push_back(p.value().cols());
        n += p.value().cols();
    }
    Tensor y(Tensor::Shape{m, n});
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& pv = parts[k].value();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) y[i * n + offsets[k] + j] = pv[i * widths[k] + j];
    }
    auto inputs = ids;
    return t.push("concat_cols", std::move(y), std::move(inputs), [ids, offsets, widths, m, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!tp.requires_grad(ids[k])) continue;
            Tensor& gk = tp.grad_buffer(ids[k]);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < widths[k]; ++j) gk[i * widths[k] + j] += g[i * n + offsets[k] + j];
        }
    });
}

Var detach(Var x) { return x.tape->constant(x.value()); }

}  // namespace histost::ad
