#pragma once

#include <cmath>
#include <vector>

#include "ma2rl/numerics/autodiff.hpp"

namespace ma2rl::ad {

// Batched multi-head scaled dot-product attention over fixed-size entity sets.
//
// Inputs are stacked row-wise: a batch of B sets with `set_size` rows each is a
// (B*set_size) x (heads*head_dim) matrix, head h occupying columns
// [h*head_dim, (h+1)*head_dim). Sets never attend across each other.

namespace detail {

inline void check_attention_shapes(const Var& k, const Var& v, Index set_size, Index heads) {
    if (set_size <= 0 || heads <= 0) throw DimensionError("attention: set size and heads must be positive");
    if (k.rows() != v.rows() || k.cols() != v.cols())
        throw DimensionError("attention: keys " + shape_string(k.value()) + " vs values " + shape_string(v.value()));
    if (k.rows() % set_size != 0) throw DimensionError("attention: key rows not a multiple of the set size");
    if (k.cols() % heads != 0) throw DimensionError("attention: width not divisible by head count");
}

}  // namespace detail

/// Row-stochastic weights of one set/head: softmax(q k^T / sqrt(d)).
inline Tensor attention_weights(const Tensor& q, const Tensor& k) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(k.cols()));
    Tensor s = (q * k.transpose()) * inv;
    return detail::softmax_rows_value(s);
}

/// Self-attention: every row of a set attends over the rows of the same set.
inline Var multihead_self_attention(const Var& q, const Var& k, const Var& v, Index set_size, Index heads) {
    detail::check_attention_shapes(k, v, set_size, heads);
    if (q.rows() != k.rows() || q.cols() != k.cols())
        throw DimensionError("self-attention: queries " + shape_string(q.value()) + " vs keys " + shape_string(k.value()));
    const Index sets = q.rows() / set_size;
    const Index hd = q.cols() / heads;
    Tensor out(q.rows(), q.cols());
    auto probs = std::make_shared<std::vector<Tensor>>();
    probs->reserve(static_cast<std::size_t>(sets * heads));
    for (Index b = 0; b < sets; ++b)
        for (Index h = 0; h < heads; ++h) {
            const auto qb = q.value().block(b * set_size, h * hd, set_size, hd);
            const auto kb = k.value().block(b * set_size, h * hd, set_size, hd);
            const auto vb = v.value().block(b * set_size, h * hd, set_size, hd);
            Tensor p = attention_weights(qb, kb);
            out.block(b * set_size, h * hd, set_size, hd).noalias() = p * vb;
            probs->push_back(std::move(p));
        }
    return q.tape().record(std::move(out), {q, k, v}, [q, k, v, set_size, heads, sets, hd, probs](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const double inv = 1.0 / std::sqrt(static_cast<double>(hd));
        const bool gq = t.requires_grad(q.id()), gk = t.requires_grad(k.id()), gv = t.requires_grad(v.id());
        for (Index b = 0; b < sets; ++b)
            for (Index h = 0; h < heads; ++h) {
                const Tensor& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
                const auto go = g.block(b * set_size, h * hd, set_size, hd);
                const auto qb = q.value().block(b * set_size, h * hd, set_size, hd);
                const auto kb = k.value().block(b * set_size, h * hd, set_size, hd);
                const auto vb = v.value().block(b * set_size, h * hd, set_size, hd);
                if (gv) t.grad_slot(v.id()).block(b * set_size, h * hd, set_size, hd).noalias() += p.transpose() * go;
                if (!gq && !gk) continue;
                const Tensor dp = go * vb.transpose();
                const Eigen::VectorXd dot = dp.cwiseProduct(p).rowwise().sum();
                const Tensor ds = p.cwiseProduct(dp - dot.replicate(1, set_size)) * inv;
                if (gq) t.grad_slot(q.id()).block(b * set_size, h * hd, set_size, hd).noalias() += ds * kb;
                if (gk) t.grad_slot(k.id()).block(b * set_size, h * hd, set_size, hd).noalias() += ds.transpose() * qb;
            }
    });
}

/// One query row per set attending over that set's rows: q is B x (heads*head_dim).
inline Var multihead_query_attention(const Var& q, const Var& k, const Var& v, Index set_size, Index heads) {
    detail::check_attention_shapes(k, v, set_size, heads);
    const Index sets = k.rows() / set_size;
    if (q.rows() != sets || q.cols() != k.cols())
        throw DimensionError("query attention: queries " + shape_string(q.value()) + " for " + std::to_string(sets) +
                             " sets of width " + std::to_string(k.cols()));
    const Index hd = q.cols() / heads;
    Tensor out(sets, q.cols());
    auto probs = std::make_shared<std::vector<Tensor>>();
    probs->reserve(static_cast<std::size_t>(sets * heads));
    for (Index b = 0; b < sets; ++b)
        for (Index h = 0; h < heads; ++h) {
            const auto qb = q.value().block(b, h * hd, 1, hd);
            const auto kb = k.value().block(b * set_size, h * hd, set_size, hd);
            const auto vb = v.value().block(b * set_size, h * hd, set_size, hd);
            Tensor p = attention_weights(qb, kb);
            out.block(b, h * hd, 1, hd).noalias() = p * vb;
            probs->push_back(std::move(p));
        }
    return q.tape().record(std::move(out), {q, k, v}, [q, k, v, set_size, heads, sets, hd, probs](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const double inv = 1.0 / std::sqrt(static_cast<double>(hd));
        const bool gq = t.requires_grad(q.id()), gk = t.requires_grad(k.id()), gv = t.requires_grad(v.id());
        for (Index b = 0; b < sets; ++b)
            for (Index h = 0; h < heads; ++h) {
                const Tensor& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
                const auto go = g.block(b, h * hd, 1, hd);
                const auto qb = q.value().block(b, h * hd, 1, hd);
                const auto kb = k.value().block(b * set_size, h * hd, set_size, hd);
                const auto vb = v.value().block(b * set_size, h * hd, set_size, hd);
                if (gv) t.grad_slot(v.id()).block(b * set_size, h * hd, set_size, hd).noalias() += p.transpose() * go;
                if (!gq && !gk) continue;
                const Tensor dp = go * vb.transpose();
                const double dot = dp.cwiseProduct(p).sum();
                const Tensor ds = p.cwiseProduct((dp.array() - dot).matrix()) * inv;
                if (gq) t.grad_slot(q.id()).block(b, h * hd, 1, hd).noalias() += ds * kb;
                if (gk) t.grad_slot(k.id()).block(b * set_size, h * hd, set_size, hd).noalias() += ds.transpose() * qb;
            }
    });
}

}  // namespace ma2rl::ad
