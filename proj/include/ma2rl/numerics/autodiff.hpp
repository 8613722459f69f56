#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ma2rl/errors.hpp"
#include "ma2rl/numerics/parameter_store.hpp"
#include "ma2rl/numerics/tensor.hpp"

namespace ma2rl::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    [[nodiscard]] const Tensor& value() const;
    [[nodiscard]] Index rows() const { return value().rows(); }
    [[nodiscard]] Index cols() const { return value().cols(); }
    [[nodiscard]] double item() const;
    [[nodiscard]] Tape& tape() const { return *tape_; }
    [[nodiscard]] std::size_t id() const noexcept { return id_; }
    [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Linear record of a computation. Nodes are appended in evaluation order, so
/// reverse iteration is a valid topological order for the backward sweep.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    [[nodiscard]] bool grad_enabled() const noexcept { return grad_enabled_; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

    Var constant(Tensor value) { return push(std::move(value), false, nullptr, nullptr); }

    /// Differentiable input whose gradient is read back with grad().
    Var leaf(Tensor value) { return push(std::move(value), grad_enabled_, nullptr, nullptr); }

    /// Leaf bound to a store entry; backward() accumulates into the entry's grad.
    /// Repeated requests for the same entry return the same node.
    Var parameter(ParameterStore& store, std::string_view name) {
        const std::size_t idx = store.index_of(name);
        const auto key = std::make_pair(&store, idx);
        if (auto it = params_.find(key); it != params_.end()) return Var(this, it->second);
        ParameterEntry* entry = &store.entry(idx);
        Var v = push(entry->value, grad_enabled_, nullptr, grad_enabled_ ? entry : nullptr);
        params_.emplace(key, v.id());
        return v;
    }

    [[nodiscard]] const Tensor& value(std::size_t id) const { return nodes_[id].value; }

    /// Gradient of the last backward() root w.r.t. this node (zeros if untouched).
    [[nodiscard]] Tensor grad(const Var& v) const {
        const Node& n = nodes_.at(v.id());
        if (n.grad.size() == 0) return Tensor::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Accumulation slot for a node's gradient, allocated on first use.
    Tensor& grad_slot(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.size() == 0) n.grad = Tensor::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    [[nodiscard]] const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
        return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
    }

    Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
        bool needs = false;
        if (grad_enabled_)
            for (const Var& in : inputs) {
                if (in.tape_ != this) throw ContractError("operands live on different tapes");
                needs = needs || nodes_[in.id()].requires_grad;
            }
        return push(std::move(value), needs, needs ? std::move(fn) : nullptr, nullptr);
    }

    /// Reverse sweep from a scalar root. Parameter gradients are added to their
    /// store entries, which are then marked ready.
    void backward(const Var& root) {
        if (!grad_enabled_) throw StateError("backward on a tape recorded without gradients");
        if (root.tape_ != this) throw ContractError("root belongs to another tape");
        const Tensor& rv = nodes_[root.id()].value;
        if (rv.rows() != 1 || rv.cols() != 1) throw DimensionError("backward root must be 1x1, got " + shape_string(rv));
        for (auto& n : nodes_) n.grad.resize(0, 0);
        grad_slot(root.id())(0, 0) = 1.0;
        for (std::size_t i = root.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
            n.backward(*this, i);
        }
        for (auto& n : nodes_) {
            if (n.param == nullptr) continue;
            if (n.grad.size() != 0) n.param->grad += n.grad;
            n.param->grad_ready = true;
        }
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        BackwardFn backward;
        ParameterEntry* param = nullptr;
    };

    Var push(Tensor value, bool requires_grad, BackwardFn fn, ParameterEntry* param) {
        nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(fn), param});
        return Var(this, nodes_.size() - 1);
    }

    bool grad_enabled_;
    std::vector<Node> nodes_;
    std::map<std::pair<ParameterStore*, std::size_t>, std::size_t> params_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline double Var::item() const {
    const Tensor& v = value();
    if (v.size() != 1) throw DimensionError("item() on non-scalar " + shape_string(v));
    return v(0, 0);
}

namespace detail {

inline void accumulate(Tape& t, const Var& v, const Tensor& g) {
    if (t.requires_grad(v.id())) t.grad_slot(v.id()) += g;
}

template <class Expr>
inline void accumulate_expr(Tape& t, const Var& v, const Expr& g) {
    if (t.requires_grad(v.id())) t.grad_slot(v.id()) += g;
}

inline bool broadcastable(Index from, Index to) { return from == to || from == 1; }

inline Tensor expand(const Tensor& x, Index rows, Index cols) {
    if (x.rows() == rows && x.cols() == cols) return x;
    if (x.rows() == 1 && x.cols() == 1) return Tensor::Constant(rows, cols, x(0, 0));
    if (x.rows() == 1) return x.replicate(rows, 1);
    return x.replicate(1, cols);
}

inline Tensor reduce_to(const Tensor& g, Index rows, Index cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    if (rows == 1 && cols == 1) return scalar_tensor(g.sum());
    if (rows == 1) return g.colwise().sum();
    return g.rowwise().sum();
}

inline std::pair<Index, Index> broadcast_shape(const Var& a, const Var& b, const char* op) {
    const Index r = std::max(a.rows(), b.rows());
    const Index c = std::max(a.cols(), b.cols());
    if (!broadcastable(a.rows(), r) || !broadcastable(a.cols(), c) || !broadcastable(b.rows(), r) ||
        !broadcastable(b.cols(), c))
        throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(a.value()) + " with " +
                             shape_string(b.value()));
    return {r, c};
}

/// As unary(), with the forward map applied to the whole tensor at once (vectorizable).
template <class Fwd, class Dfn>
Var unary_whole(const Var& a, Fwd fwd, Dfn dfn) {
    Tensor out = fwd(a.value());
    return a.tape().record(std::move(out), {a}, [a, dfn](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const Tensor& x = t.value(a.id());
        const Tensor& y = t.value(self);
        accumulate_expr(t, a, g.cwiseProduct(dfn(x, y)));
    });
}

template <class Fwd, class Dfn>
Var unary(const Var& a, Fwd fwd, Dfn dfn) {
    return unary_whole(a, [&fwd](const Tensor& x) -> Tensor { return x.unaryExpr(fwd); }, dfn);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows())
        throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.value()) + " x " +
                             shape_string(b.value()));
    Tensor out = a.value() * b.value();
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        if (t.requires_grad(a.id())) t.grad_slot(a.id()).noalias() += g * b.value().transpose();
        if (t.requires_grad(b.id())) t.grad_slot(b.id()).noalias() += a.value().transpose() * g;
    });
}

/// a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
    if (a.cols() != b.cols())
        throw DimensionError("matmul_nt: inner dimensions differ, " + shape_string(a.value()) + " x " +
                             shape_string(b.value()) + "^T");
    Tensor out = a.value() * b.value().transpose();
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        if (t.requires_grad(a.id())) t.grad_slot(a.id()).noalias() += g * b.value();
        if (t.requires_grad(b.id())) t.grad_slot(b.id()).noalias() += g.transpose() * a.value();
    });
}

inline Var transpose(const Var& a) {
    Tensor out = a.value().transpose();
    return a.tape().record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        detail::accumulate(t, a, t.upstream(self).transpose());
    });
}

// ---------------------------------------------------------------------------
// Broadcasting elementwise arithmetic. Either operand may be 1x1, 1xc or rx1.

inline Var add(const Var& a, const Var& b) {
    const auto [r, c] = detail::broadcast_shape(a, b, "add");
    Tensor out = detail::expand(a.value(), r, c) + detail::expand(b.value(), r, c);
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        detail::accumulate(t, a, detail::reduce_to(g, a.rows(), a.cols()));
        detail::accumulate(t, b, detail::reduce_to(g, b.rows(), b.cols()));
    });
}

inline Var sub(const Var& a, const Var& b) {
    const auto [r, c] = detail::broadcast_shape(a, b, "sub");
    Tensor out = detail::expand(a.value(), r, c) - detail::expand(b.value(), r, c);
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        detail::accumulate(t, a, detail::reduce_to(g, a.rows(), a.cols()));
        detail::accumulate(t, b, detail::reduce_to(-g, b.rows(), b.cols()));
    });
}

inline Var mul(const Var& a, const Var& b) {
    const auto [r, c] = detail::broadcast_shape(a, b, "mul");
    Tensor out = detail::expand(a.value(), r, c).cwiseProduct(detail::expand(b.value(), r, c));
    return a.tape().record(std::move(out), {a, b}, [a, b, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        if (t.requires_grad(a.id()))
            detail::accumulate(t, a, detail::reduce_to(g.cwiseProduct(detail::expand(b.value(), r, c)), a.rows(), a.cols()));
        if (t.requires_grad(b.id()))
            detail::accumulate(t, b, detail::reduce_to(g.cwiseProduct(detail::expand(a.value(), r, c)), b.rows(), b.cols()));
    });
}

inline Var div(const Var& a, const Var& b) {
    const auto [r, c] = detail::broadcast_shape(a, b, "div");
    Tensor out = detail::expand(a.value(), r, c).cwiseQuotient(detail::expand(b.value(), r, c));
    return a.tape().record(std::move(out), {a, b}, [a, b, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const Tensor bv = detail::expand(b.value(), r, c);
        if (t.requires_grad(a.id())) detail::accumulate(t, a, detail::reduce_to(g.cwiseQuotient(bv), a.rows(), a.cols()));
        if (t.requires_grad(b.id())) {
            const Tensor& y = t.value(self);
            detail::accumulate(t, b, detail::reduce_to(-g.cwiseProduct(y).cwiseQuotient(bv), b.rows(), b.cols()));
        }
    });
}

inline Var scale(const Var& a, double s) {
    Tensor out = a.value() * s;
    return a.tape().record(std::move(out), {a}, [a, s](Tape& t, std::size_t self) {
        detail::accumulate_expr(t, a, t.upstream(self) * s);
    });
}

inline Var add_scalar(const Var& a, double s) {
    Tensor out = a.value().array() + s;
    return a.tape().record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        detail::accumulate(t, a, t.upstream(self));
    });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

/// tanh(x) = sign(x) (1 - e) / (1 + e) with e = exp(-2|x|), on packets.
inline Var tanh(const Var& a) {
    return detail::unary_whole(
        a,
        [](const Tensor& x) -> Tensor {
            const auto e = (-2.0 * x.array().abs()).exp().eval();
            return ((1.0 - e) / (1.0 + e) * x.array().sign()).matrix();
        },
        [](const Tensor&, const Tensor& y) -> Tensor { return (1.0 - y.array().square()).matrix(); });
}

inline Var sigmoid(const Var& a) {
    return detail::unary_whole(
        a,
        [](const Tensor& x) -> Tensor {
            const auto e = (-x.array().abs()).exp().eval();
            return (x.array() >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e)).matrix();
        },
        [](const Tensor&, const Tensor& y) -> Tensor { return (y.array() * (1.0 - y.array())).matrix(); });
}

inline Var exp(const Var& a) {
    return detail::unary_whole(
        a,
        // the vectorised exp clamps its input and leaves a denormal instead of 0
        [](const Tensor& x) -> Tensor { return (x.array() < -745.0).select(0.0, x.array().exp()).matrix(); },
        [](const Tensor&, const Tensor& y) -> Tensor { return y; });
}

inline Var log(const Var& a) {
    return detail::unary(
        a, [](double x) { return std::log(x); },
        [](const Tensor& x, const Tensor&) -> Tensor { return x.cwiseInverse(); });
}

inline Var square(const Var& a) {
    return detail::unary(
        a, [](double x) { return x * x; }, [](const Tensor& x, const Tensor&) -> Tensor { return 2.0 * x; });
}

inline Var sqrt(const Var& a) {
    return detail::unary(
        a, [](double x) { return std::sqrt(x); },
        [](const Tensor&, const Tensor& y) -> Tensor { return (0.5 / y.array()).matrix(); });
}

inline Var reciprocal(const Var& a) {
    return detail::unary(
        a, [](double x) { return 1.0 / x; },
        [](const Tensor&, const Tensor& y) -> Tensor { return (-y.array().square()).matrix(); });
}

/// Clamp with zero gradient outside [lo, hi].
inline Var clamp(const Var& a, double lo, double hi) {
    return detail::unary(
        a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](const Tensor& x, const Tensor&) -> Tensor {
            return x.unaryExpr([lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
        });
}

/// Huber loss applied elementwise.
inline Var huber(const Var& a, double delta) {
    return detail::unary(
        a,
        [delta](double x) { return std::abs(x) <= delta ? 0.5 * x * x : delta * (std::abs(x) - 0.5 * delta); },
        [delta](const Tensor& x, const Tensor&) -> Tensor {
            return x.unaryExpr([delta](double v) { return std::clamp(v, -delta, delta); });
        });
}

inline Var minimum(const Var& a, const Var& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError("minimum: " + shape_string(a.value()) + " vs " + shape_string(b.value()));
    Tensor out = a.value().cwiseMin(b.value());
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const Tensor pick_a = (a.value().array() <= b.value().array()).cast<double>().matrix();
        detail::accumulate(t, a, g.cwiseProduct(pick_a));
        detail::accumulate(t, b, g.cwiseProduct((1.0 - pick_a.array()).matrix()));
    });
}

inline Var maximum(const Var& a, const Var& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError("maximum: " + shape_string(a.value()) + " vs " + shape_string(b.value()));
    Tensor out = a.value().cwiseMax(b.value());
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const Tensor pick_a = (a.value().array() >= b.value().array()).cast<double>().matrix();
        detail::accumulate(t, a, g.cwiseProduct(pick_a));
        detail::accumulate(t, b, g.cwiseProduct((1.0 - pick_a.array()).matrix()));
    });
}

inline Var stop_gradient(const Var& a) { return a.tape().constant(a.value()); }

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
    Tensor out = scalar_tensor(a.value().sum());
    return a.tape().record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        const double g = t.upstream(self)(0, 0);
        if (t.requires_grad(a.id())) t.grad_slot(a.id()).array() += g;
    });
}

inline Var mean(const Var& a) {
    if (a.value().size() == 0) throw DimensionError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Sum over columns: r x c -> r x 1.
inline Var row_sum(const Var& a) {
    Tensor out = a.value().rowwise().sum();
    return a.tape().record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        detail::accumulate(t, a, g.replicate(1, a.cols()));
    });
}

/// Sum over rows: r x c -> 1 x c.
inline Var col_sum(const Var& a) {
    Tensor out = a.value().colwise().sum();
    return a.tape().record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        detail::accumulate(t, a, g.replicate(a.rows(), 1));
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_cols of nothing");
    const Index r = parts[0].rows();
    Index c = 0;
    for (const Var& p : parts) {
        if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
        c += p.cols();
    }
    Tensor out(r, c);
    Index off = 0;
    for (const Var& p : parts) {
        out.middleCols(off, p.cols()) = p.value();
        off += p.cols();
    }
    std::vector<Var> keep(parts.begin(), parts.end());
    return parts[0].tape().record(std::move(out), parts, [keep](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        Index o = 0;
        for (const Var& p : keep) {
            if (t.requires_grad(p.id())) t.grad_slot(p.id()) += g.middleCols(o, p.cols());
            o += p.cols();
        }
    });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
    return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_rows of nothing");
    const Index c = parts[0].cols();
    Index r = 0;
    for (const Var& p : parts) {
        if (p.cols() != c) throw DimensionError("concat_rows: column counts differ");
        r += p.rows();
    }
    Tensor out(r, c);
    Index off = 0;
    for (const Var& p : parts) {
        out.middleRows(off, p.rows()) = p.value();
        off += p.rows();
    }
    std::vector<Var> keep(parts.begin(), parts.end());
    return parts[0].tape().record(std::move(out), parts, [keep](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        Index o = 0;
        for (const Var& p : keep) {
            if (t.requires_grad(p.id())) t.grad_slot(p.id()) += g.middleRows(o, p.rows());
            o += p.rows();
        }
    });
}

inline Var slice_cols(const Var& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.cols())
        throw DimensionError("slice_cols out of range for " + shape_string(a.value()));
    Tensor out = a.value().middleCols(start, count);
    return a.tape().record(std::move(out), {a}, [a, start, count](Tape& t, std::size_t self) {
        if (t.requires_grad(a.id())) t.grad_slot(a.id()).middleCols(start, count) += t.upstream(self);
    });
}

inline Var slice_rows(const Var& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.rows())
        throw DimensionError("slice_rows out of range for " + shape_string(a.value()));
    Tensor out = a.value().middleRows(start, count);
    return a.tape().record(std::move(out), {a}, [a, start, count](Tape& t, std::size_t self) {
        if (t.requires_grad(a.id())) t.grad_slot(a.id()).middleRows(start, count) += t.upstream(self);
    });
}

inline Var gather_rows(const Var& a, std::vector<Index> rows) {
    Tensor out(static_cast<Index>(rows.size()), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= a.rows()) throw DimensionError("gather_rows index out of range");
        out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
    }
    return a.tape().record(std::move(out), {a}, [a, rows = std::move(rows)](Tape& t, std::size_t self) {
        if (!t.requires_grad(a.id())) return;
        const Tensor& g = t.upstream(self);
        Tensor& ga = t.grad_slot(a.id());
        for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Index>(i));
    });
}

/// Each row repeated `times` times consecutively: r x c -> (r*times) x c.
inline Var repeat_rows(const Var& a, Index times) {
    Tensor out(a.rows() * times, a.cols());
    for (Index i = 0; i < a.rows(); ++i) out.middleRows(i * times, times) = a.value().row(i).replicate(times, 1);
    return a.tape().record(std::move(out), {a}, [a, times](Tape& t, std::size_t self) {
        if (!t.requires_grad(a.id())) return;
        const Tensor& g = t.upstream(self);
        Tensor& ga = t.grad_slot(a.id());
        for (Index i = 0; i < a.rows(); ++i) ga.row(i) += g.middleRows(i * times, times).colwise().sum();
    });
}

/// Sums consecutive groups of `group` rows: (r*group) x c -> r x c.
inline Var segment_sum(const Var& a, Index group) {
    if (group <= 0 || a.rows() % group != 0) throw DimensionError("segment_sum: rows not divisible by group");
    const Index r = a.rows() / group;
    Tensor out(r, a.cols());
    for (Index i = 0; i < r; ++i) out.row(i) = a.value().middleRows(i * group, group).colwise().sum();
    return a.tape().record(std::move(out), {a}, [a, group, r](Tape& t, std::size_t self) {
        if (!t.requires_grad(a.id())) return;
        const Tensor& g = t.upstream(self);
        Tensor& ga = t.grad_slot(a.id());
        for (Index i = 0; i < r; ++i) ga.middleRows(i * group, group).rowwise() += g.row(i);
    });
}

/// Row-major reinterpretation with the same number of entries.
inline Var reshape(const Var& a, Index rows, Index cols) {
    if (rows * cols != a.value().size())
        throw DimensionError("reshape " + shape_string(a.value()) + " to " + shape_string(rows, cols));
    Tensor out = Eigen::Map<const Tensor>(a.value().data(), rows, cols);
    return a.tape().record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        if (!t.requires_grad(a.id())) return;
        const Tensor& g = t.upstream(self);
        t.grad_slot(a.id()) += Eigen::Map<const Tensor>(g.data(), a.rows(), a.cols());
    });
}

/// One entry per row: out(i) = a(i, cols[i]). Result is r x 1.
inline Var pick(const Var& a, std::vector<Index> cols) {
    if (static_cast<Index>(cols.size()) != a.rows()) throw DimensionError("pick: one column per row required");
    Tensor out(a.rows(), 1);
    for (Index i = 0; i < a.rows(); ++i) {
        if (cols[i] < 0 || cols[i] >= a.cols()) throw DimensionError("pick: column out of range");
        out(i, 0) = a.value()(i, cols[i]);
    }
    return a.tape().record(std::move(out), {a}, [a, cols = std::move(cols)](Tape& t, std::size_t self) {
        if (!t.requires_grad(a.id())) return;
        const Tensor& g = t.upstream(self);
        Tensor& ga = t.grad_slot(a.id());
        for (Index i = 0; i < a.rows(); ++i) ga(i, cols[static_cast<std::size_t>(i)]) += g(i, 0);
    });
}

// ---------------------------------------------------------------------------
// Softmax family

namespace detail {
inline Tensor softmax_rows_value(const Tensor& x) {
    Tensor out(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
        const double mx = x.row(i).maxCoeff();
        out.row(i) = (x.row(i).array() - mx).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}
}  // namespace detail

/// Softmax along axis (1 = within each row, 0 = within each column).
inline Var softmax(const Var& logits, int axis = 1) {
    if (axis != 0 && axis != 1) throw DimensionError("softmax axis must be 0 or 1");
    if (axis == 0) return transpose(softmax(transpose(logits), 1));
    Tensor out = detail::softmax_rows_value(logits.value());
    return logits.tape().record(std::move(out), {logits}, [logits](Tape& t, std::size_t self) {
        if (!t.requires_grad(logits.id())) return;
        const Tensor& g = t.upstream(self);
        const Tensor& y = t.value(self);
        const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
        Tensor dx = y.cwiseProduct(g - dot.replicate(1, g.cols()));
        t.grad_slot(logits.id()) += dx;
    });
}

inline Var log_softmax(const Var& logits) {
    const Tensor& x = logits.value();
    Tensor out(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
        const double mx = x.row(i).maxCoeff();
        const double lse = mx + std::log((x.row(i).array() - mx).exp().sum());
        out.row(i) = x.row(i).array() - lse;
    }
    return logits.tape().record(std::move(out), {logits}, [logits](Tape& t, std::size_t self) {
        if (!t.requires_grad(logits.id())) return;
        const Tensor& g = t.upstream(self);
        const Tensor p = t.value(self).array().exp().matrix();
        const Eigen::VectorXd gs = g.rowwise().sum();
        t.grad_slot(logits.id()) += g - p.cwiseProduct(gs.replicate(1, g.cols()));
    });
}

/// Replaces entries where mask == 0 by a large negative constant (no gradient).
inline constexpr double kMaskedLogit = -1e10;
inline Var mask_logits(const Var& logits, const Tensor& mask) {
    if (mask.rows() != logits.rows() || mask.cols() != logits.cols())
        throw DimensionError("mask_logits: mask " + shape_string(mask) + " vs logits " + shape_string(logits.value()));
    Tensor out = logits.value();
    for (Index i = 0; i < out.size(); ++i)
        if (mask.data()[i] == 0.0) out.data()[i] = kMaskedLogit;
    return logits.tape().record(std::move(out), {logits}, [logits, mask](Tape& t, std::size_t self) {
        detail::accumulate(t, logits, t.upstream(self).cwiseProduct(mask));
    });
}

/// Forward value is the one-hot argmax of each row of `soft`; the backward
/// pass is the identity onto `soft` (straight-through estimator).
inline Var straight_through_onehot(const Var& soft) {
    Tensor out = Tensor::Zero(soft.rows(), soft.cols());
    for (Index i = 0; i < soft.rows(); ++i) {
        Index arg = 0;
        soft.value().row(i).maxCoeff(&arg);
        out(i, arg) = 1.0;
    }
    return soft.tape().record(std::move(out), {soft}, [soft](Tape& t, std::size_t self) {
        detail::accumulate(t, soft, t.upstream(self));
    });
}

}  // namespace ma2rl::ad
