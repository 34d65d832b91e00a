#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stats/errors.hpp"
#include "stats/tensor.hpp"

namespace stats {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so the
/// node index is a topological order and the backward sweep simply walks it
/// in reverse.
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value) { return push("constant", std::move(value), false, {}, nullptr); }
    Var variable(Tensor value) { return push("variable", std::move(value), true, {}, nullptr); }

    /// Record an op result. The output must be finite; `backward` is dropped when
    /// no input needs a gradient.
    Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward backward) {
        std::vector<std::size_t> ids;
        ids.reserve(inputs.size());
        bool needs = false;
        for (const Var& v : inputs) {
            if (v.tape() != this) throw ContractViolation(std::string(op) + ": input from a different tape");
            ids.push_back(v.id());
            needs = needs || nodes_[v.id()].requires_grad;
        }
        return record_ids(op, std::move(value), std::move(ids), needs, std::move(backward));
    }

    Var record_ids(const char* op, Tensor value, std::vector<std::size_t> ids, bool needs, Backward backward) {
        if (!value.all_finite()) throw NumericFailure(op, "non-finite forward value");
        return push(op, std::move(value), needs, std::move(ids), needs ? std::move(backward) : nullptr);
    }

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    const char* op(std::size_t id) const { return nodes_[id].op; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Adjoint buffer of a node, zero-initialised on first access.
    Tensor& grad(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
        return n.grad;
    }

    /// Reverse sweep from a scalar root. Adjoints accumulate additively across
    /// all uses of a node.
    void backward(Var root) {
        if (root.tape() != this) throw ContractViolation("backward: root from a different tape");
        if (nodes_[root.id()].value.size() != 1)
            throw ContractViolation("backward: root is not scalar, shape " +
                                    shape_str(nodes_[root.id()].value.shape()));
        reset_gradients();
        grad(root.id()).fill(1.0);
        for (std::size_t i = root.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
            n.backward(*this, i);
            for (std::size_t in : nodes_[i].inputs) {
                const Node& src = nodes_[in];
                if (src.requires_grad && !src.grad.empty() && !src.grad.all_finite())
                    throw NumericFailure(nodes_[i].op, "non-finite adjoint during backward");
            }
        }
    }

    Tensor gradient(Var v) const {
        const Node& n = nodes_[v.id()];
        if (n.grad.empty()) return Tensor::zeros_like(n.value);
        return n.grad;
    }

    void reset_gradients() {
        for (Node& n : nodes_) n.grad = Tensor();
    }

private:
    struct Node {
        const char* op;
        Tensor value;
        Tensor grad;
        bool requires_grad;
        std::vector<std::size_t> inputs;
        Backward backward;
    };

    Var push(const char* op, Tensor value, bool needs, std::vector<std::size_t> inputs, Backward backward) {
        nodes_.push_back(Node{op, std::move(value), Tensor(), needs, std::move(inputs), std::move(backward)});
        return Var(this, nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

/// Scalar value of `root` and its gradient with respect to each of `wrt`.
/// Inputs that do not reach the root get a zero gradient.
inline std::pair<double, std::vector<Tensor>> evaluate_with_gradients(Var root, std::span<const Var> wrt) {
    Tape& tape = *root.tape();
    tape.backward(root);
    std::vector<Tensor> grads;
    grads.reserve(wrt.size());
    for (const Var& v : wrt) grads.push_back(tape.gradient(v));
    return {root.value().item(), std::move(grads)};
}

namespace ad {

namespace detail {

inline void accumulate(Tape& t, std::size_t id, const Tensor& g) {
    if (!t.requires_grad(id)) return;
    Tensor& dst = t.grad(id);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

inline void check_same(const Var& a, const Var& b, const char* op) { require_same_shape(a.value(), b.value(), op); }

inline void require_rank2(const Var& a, const char* op) {
    if (a.value().rank() != 2) throw ContractViolation(std::string(op) + ": expected rank-2, got " + shape_str(a.shape()));
}

/// Elementwise unary op; `df(x, y)` is dy/dx given input x and output y.
template <typename F, typename DF>
Var unary(const char* op, Var x, F f, DF df) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    const std::size_t xid = x.id();
    return x.tape()->record(op, std::move(out), {x}, [xid, df](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.value(xid);
        const Tensor& yv = t.value(self);
        Tensor& dx = t.grad(xid);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * df(xv[i], yv[i]);
    });
}

}  // namespace detail

inline Var add(Var a, Var b) {
    detail::check_same(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    const std::size_t ai = a.id(), bi = b.id();
    return a.tape()->record("add", std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        detail::accumulate(t, ai, g);
        detail::accumulate(t, bi, g);
    });
}

inline Var sub(Var a, Var b) {
    detail::check_same(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    const std::size_t ai = a.id(), bi = b.id();
    return a.tape()->record("sub", std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        detail::accumulate(t, ai, g);
        if (t.requires_grad(bi)) {
            Tensor& db = t.grad(bi);
            for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
        }
    });
}

inline Var mul(Var a, Var b) {
    detail::check_same(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    const std::size_t ai = a.id(), bi = b.id();
    return a.tape()->record("mul", std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ai)) {
            Tensor& da = t.grad(ai);
            const Tensor& bv = t.value(bi);
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
        }
        if (t.requires_grad(bi)) {
            Tensor& db = t.grad(bi);
            const Tensor& av = t.value(ai);
            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
        }
    });
}

inline Var div(Var a, Var b) {
    detail::check_same(a, b, "div");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
    const std::size_t ai = a.id(), bi = b.id();
    return a.tape()->record("div", std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& bv = t.value(bi);
        const Tensor& yv = t.value(self);
        if (t.requires_grad(ai)) {
            Tensor& da = t.grad(ai);
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / bv[i];
        }
        if (t.requires_grad(bi)) {
            Tensor& db = t.grad(bi);
            for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i] * yv[i] / bv[i];
        }
    });
}

inline Var scale(Var x, double s) {
    return detail::unary("scale", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Var add_scalar(Var x, double s) {
    return detail::unary("add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

inline Var neg(Var x) { return scale(x, -1.0); }

inline Var square(Var x) {
    return detail::unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Var sqrt(Var x) {
    for (double v : x.value().values())
        if (v < 0.0) throw NumericFailure("sqrt", "negative input");
    return detail::unary("sqrt", x, [](double v) { return std::sqrt(v); },
                         [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

inline Var log(Var x) {
    for (double v : x.value().values())
        if (!(v > 0.0)) throw NumericFailure("log", "non-positive input");
    return detail::unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var exp(Var x) {
    return detail::unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline double sigmoid_value(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

inline Var sigmoid(Var x) {
    return detail::unary("sigmoid", x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Var silu(Var x) {
    return detail::unary(
        "silu", x, [](double v) { return v * sigmoid_value(v); },
        [](double v, double) {
            const double s = sigmoid_value(v);
            return s * (1.0 + v * (1.0 - s));
        });
}

/// Clamp to [lo, hi]. The adjoint is zero strictly outside the interval.
inline Var clamp(Var x, double lo, double hi) {
    if (!(lo <= hi)) throw ContractViolation("clamp: lo > hi");
    return detail::unary(
        "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0; });
}

/// x log x with 0 log 0 := 0.
inline Var xlogx(Var x) {
    for (double v : x.value().values())
        if (v < 0.0) throw NumericFailure("xlogx", "negative input");
    return detail::unary(
        "xlogx", x, [](double v) { return v > 0.0 ? v * std::log(v) : 0.0; },
        [](double v, double) { return v > 0.0 ? std::log(v) + 1.0 : 0.0; });
}

/// sqrt(re^2 + im^2); the adjoint at a zero magnitude is taken as zero.
inline Var magnitude(Var re, Var im) {
    detail::check_same(re, im, "magnitude");
    Tensor out(re.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(re.value()[i], im.value()[i]);
    const std::size_t ri = re.id(), ii = im.id();
    return re.tape()->record("magnitude", std::move(out), {re, im}, [ri, ii](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        const Tensor& rv = t.value(ri);
        const Tensor& iv = t.value(ii);
        for (int which = 0; which < 2; ++which) {
            const std::size_t id = which == 0 ? ri : ii;
            if (!t.requires_grad(id)) continue;
            const Tensor& src = which == 0 ? rv : iv;
            Tensor& d = t.grad(id);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (y[i] > 0.0) d[i] += g[i] * src[i] / y[i];
        }
    });
}

/// A(MxK) * B(KxN)
inline Var matmul(Var a, Var b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) throw ContractViolation("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor out({m, n});
    gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
    const std::size_t ai = a.id(), bi = b.id();
    return a.tape()->record("matmul", std::move(out), {a, b}, [ai, bi, m, k, n](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ai)) gemm_nt(g.data(), t.value(bi).data(), t.grad(ai).data(), m, n, k);
        if (t.requires_grad(bi)) gemm_tn(t.value(ai).data(), g.data(), t.grad(bi).data(), m, k, n);
    });
}

/// A(MxK) * B(NxK)^T
inline Var matmul_nt(Var a, Var b) {
    detail::require_rank2(a, "matmul_nt");
    detail::require_rank2(b, "matmul_nt");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) throw ContractViolation("matmul_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    Tensor out({m, n});
    gemm_nt(a.value().data(), b.value().data(), out.data(), m, k, n);
    const std::size_t ai = a.id(), bi = b.id();
    return a.tape()->record("matmul_nt", std::move(out), {a, b}, [ai, bi, m, k, n](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ai)) gemm_nn(g.data(), t.value(bi).data(), t.grad(ai).data(), m, n, k);
        if (t.requires_grad(bi)) gemm_tn(g.data(), t.value(ai).data(), t.grad(bi).data(), m, n, k);
    });
}

/// X(NxC) + r(1xC) broadcast over rows.
inline Var add_row(Var x, Var r) {
    detail::require_rank2(x, "add_row");
    const std::size_t n = x.rows(), c = x.cols();
    if (r.value().size() != c) throw ContractViolation("add_row: row length mismatch");
    Tensor out = x.value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] += r.value()[j];
    const std::size_t xi = x.id(), ri = r.id();
    return x.tape()->record("add_row", std::move(out), {x, r}, [xi, ri, n, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        detail::accumulate(t, xi, g);
        if (t.requires_grad(ri)) {
            Tensor& dr = t.grad(ri);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) dr[j] += g[i * c + j];
        }
    });
}

/// X(NxC) * r(1xC) broadcast over rows.
inline Var mul_row(Var x, Var r) {
    detail::require_rank2(x, "mul_row");
    const std::size_t n = x.rows(), c = x.cols();
    if (r.value().size() != c) throw ContractViolation("mul_row: row length mismatch");
    Tensor out = x.value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= r.value()[j];
    const std::size_t xi = x.id(), ri = r.id();
    return x.tape()->record("mul_row", std::move(out), {x, r}, [xi, ri, n, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.value(xi);
        const Tensor& rv = t.value(ri);
        if (t.requires_grad(xi)) {
            Tensor& dx = t.grad(xi);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[i * c + j] * rv[j];
        }
        if (t.requires_grad(ri)) {
            Tensor& dr = t.grad(ri);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) dr[j] += g[i * c + j] * xv[i * c + j];
        }
    });
}

/// X(NxC) * c(Nx1) broadcast over columns.
inline Var mul_col(Var x, Var col) {
    detail::require_rank2(x, "mul_col");
    const std::size_t n = x.rows(), c = x.cols();
    if (col.value().size() != n) throw ContractViolation("mul_col: column length mismatch");
    Tensor out = x.value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= col.value()[i];
    const std::size_t xi = x.id(), ci = col.id();
    return x.tape()->record("mul_col", std::move(out), {x, col}, [xi, ci, n, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.value(xi);
        const Tensor& cv = t.value(ci);
        if (t.requires_grad(xi)) {
            Tensor& dx = t.grad(xi);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[i * c + j] * cv[i];
        }
        if (t.requires_grad(ci)) {
            Tensor& dc = t.grad(ci);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) dc[i] += g[i * c + j] * xv[i * c + j];
        }
    });
}

/// X * s where s is a 1x1 node.
inline Var scale_by(Var x, Var s) {
    if (s.value().size() != 1) throw ContractViolation("scale_by: factor must be scalar");
    const double sv = s.value()[0];
    Tensor out = x.value();
    for (double& v : out.values()) v *= sv;
    const std::size_t xi = x.id(), si = s.id();
    return x.tape()->record("scale_by", std::move(out), {x, s}, [xi, si](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(xi)) {
            const double sv = t.value(si)[0];
            Tensor& dx = t.grad(xi);
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * sv;
        }
        if (t.requires_grad(si)) {
            const Tensor& xv = t.value(xi);
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
            t.grad(si)[0] += acc;
        }
    });
}

/// X(NxK) W(MxK)^T + b(1xM). Pass an invalid Var for a bias-free map.
inline Var affine(Var x, Var w, Var b = Var()) {
    Var y = matmul_nt(x, w);
    return b.valid() ? add_row(y, b) : y;
}

inline Var sum(Var x) {
    const std::size_t xi = x.id();
    return x.tape()->record("sum", Tensor::scalar(sum_of(x.value())), {x}, [xi](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        Tensor& dx = t.grad(xi);
        for (double& v : dx.values()) v += g;
    });
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Row sums: NxC -> Nx1.
inline Var sum_cols(Var x) {
    detail::require_rank2(x, "sum_cols");
    const std::size_t n = x.rows(), c = x.cols();
    Tensor out({n, 1});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i] += x.value()[i * c + j];
    const std::size_t xi = x.id();
    return x.tape()->record("sum_cols", std::move(out), {x}, [xi, n, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& dx = t.grad(xi);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[i];
    });
}

inline Var mean_cols(Var x) { return scale(sum_cols(x), 1.0 / static_cast<double>(x.cols())); }

/// Column sums: NxC -> 1xC.
inline Var sum_rows(Var x) {
    detail::require_rank2(x, "sum_rows");
    const std::size_t n = x.rows(), c = x.cols();
    Tensor out({1, c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += x.value()[i * c + j];
    const std::size_t xi = x.id();
    return x.tape()->record("sum_rows", std::move(out), {x}, [xi, n, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& dx = t.grad(xi);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[j];
    });
}

/// Running sum along each row.
inline Var cumsum_cols(Var x) {
    detail::require_rank2(x, "cumsum_cols");
    const std::size_t n = x.rows(), c = x.cols();
    Tensor out = x.value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 1; j < c; ++j) out[i * c + j] += out[i * c + j - 1];
    const std::size_t xi = x.id();
    return x.tape()->record("cumsum_cols", std::move(out), {x}, [xi, n, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& dx = t.grad(xi);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = c; j-- > 0;) {
                acc += g[i * c + j];
                dx[i * c + j] += acc;
            }
        }
    });
}

inline Var slice_cols(Var x, std::size_t begin, std::size_t end) {
    detail::require_rank2(x, "slice_cols");
    const std::size_t n = x.rows(), c = x.cols();
    if (begin > end || end > c) throw ContractViolation("slice_cols: bad range");
    const std::size_t w = end - begin;
    Tensor out({n, w});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x.value()[i * c + begin + j];
    const std::size_t xi = x.id();
    return x.tape()->record("slice_cols", std::move(out), {x}, [xi, n, c, w, begin](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& dx = t.grad(xi);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) dx[i * c + begin + j] += g[i * w + j];
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractViolation("concat_cols: no inputs");
    Tape* tape = parts.front().tape();
    const std::size_t n = parts.front().rows();
    std::size_t total = 0;
    std::vector<std::size_t> ids, widths;
    bool needs = false;
    for (const Var& p : parts) {
        detail::require_rank2(p, "concat_cols");
        if (p.rows() != n || p.tape() != tape) throw ContractViolation("concat_cols: row mismatch");
        ids.push_back(p.id());
        widths.push_back(p.cols());
        total += p.cols();
        needs = needs || p.requires_grad();
    }
    Tensor out({n, total});
    std::size_t off = 0;
    for (const Var& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * total + off + j] = p.value()[i * w + j];
        off += w;
    }
    auto backward = [ids, widths, n, total](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const std::size_t w = widths[k];
            if (t.requires_grad(ids[k])) {
                Tensor& d = t.grad(ids[k]);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < w; ++j) d[i * w + j] += g[i * total + off + j];
            }
            off += w;
        }
    };
    return tape->record_ids("concat_cols", std::move(out), ids, needs, backward);
}

/// out[i] = v[index[i]] for a vector v; result is Nx1.
inline Var gather(Var v, std::vector<std::size_t> index) {
    const std::size_t len = v.value().size();
    Tensor out({index.size(), 1});
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= len) throw ContractViolation("gather: index out of range");
        out[i] = v.value()[index[i]];
    }
    const std::size_t vi = v.id();
    return v.tape()->record("gather", std::move(out), {v}, [vi, index = std::move(index)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& dv = t.grad(vi);
        for (std::size_t i = 0; i < index.size(); ++i) dv[index[i]] += g[i];
    });
}

/// Row i of the result is row index[i] of m.
inline Var gather_rows(Var m, std::vector<std::size_t> index) {
    detail::require_rank2(m, "gather_rows");
    const std::size_t r = m.rows(), c = m.cols();
    Tensor out({index.size(), c});
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= r) throw ContractViolation("gather_rows: index out of range");
        std::copy_n(m.value().data().data() + index[i] * c, c, out.data().data() + i * c);
    }
    const std::size_t mi = m.id();
    return m.tape()->record("gather_rows", std::move(out), {m},
                            [mi, c, index = std::move(index)](Tape& t, std::size_t self) {
                                const Tensor& g = t.grad(self);
                                Tensor& dm = t.grad(mi);
                                for (std::size_t i = 0; i < index.size(); ++i)
                                    for (std::size_t j = 0; j < c; ++j) dm[index[i] * c + j] += g[i * c + j];
                            });
}

inline Var reshape(Var x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    const std::size_t xi = x.id();
    return x.tape()->record("reshape", std::move(out), {x}, [xi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& dx = t.grad(xi);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
}

inline Var transpose(Var x) {
    detail::require_rank2(x, "transpose");
    const std::size_t r = x.rows(), c = x.cols();
    const std::size_t xi = x.id();
    return x.tape()->record("transpose", x.value().transposed(), {x}, [xi, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& dx = t.grad(xi);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[j * r + i];
    });
}

/// Mean over consecutive groups of `group` rows: (B*group)xC -> BxC.
inline Var group_mean_rows(Var x, std::size_t group) {
    detail::require_rank2(x, "group_mean_rows");
    const std::size_t n = x.rows(), c = x.cols();
    if (group == 0 || n % group != 0) throw ContractViolation("group_mean_rows: rows not divisible by group");
    const std::size_t b = n / group;
    const double w = 1.0 / static_cast<double>(group);
    Tensor out({b, c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[(i / group) * c + j] += w * x.value()[i * c + j];
    const std::size_t xi = x.id();
    return x.tape()->record("group_mean_rows", std::move(out), {x}, [xi, n, c, group, w](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& dx = t.grad(xi);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += w * g[(i / group) * c + j];
    });
}

/// Repeat every row `group` times: BxC -> (B*group)xC.
inline Var repeat_rows(Var x, std::size_t group) {
    std::vector<std::size_t> index;
    index.reserve(x.rows() * group);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t k = 0; k < group; ++k) index.push_back(i);
    return gather_rows(x, std::move(index));
}

}  // namespace ad

// Operator sugar for the common cases.
inline Var operator+(Var a, Var b) { return ad::add(a, b); }
inline Var operator-(Var a, Var b) { return ad::sub(a, b); }
inline Var operator*(Var a, Var b) { return ad::mul(a, b); }
inline Var operator/(Var a, Var b) { return ad::div(a, b); }
inline Var operator*(double s, Var x) { return ad::scale(x, s); }
inline Var operator-(Var x) { return ad::neg(x); }

}  // namespace stats
