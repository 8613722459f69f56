#pragma once

#include <string>

#include "ma2rl/numerics/autodiff.hpp"
#include "ma2rl/numerics/rng.hpp"

namespace ma2rl {

using ad::Tape;
using ad::Var;

/// x * weight^T + bias, with bias broadcast over rows.
inline Var linear(const Var& x, const Var& weight, const Var& bias) {
    if (x.cols() != weight.cols())
        throw DimensionError("linear: input " + shape_string(x.value()) + " does not fit weight " +
                             shape_string(weight.value()));
    if (bias.rows() != 1 || bias.cols() != weight.rows())
        throw DimensionError("linear: bias " + shape_string(bias.value()) + " does not fit weight " +
                             shape_string(weight.value()));
    Tensor out = x.value() * weight.value().transpose();
    out.rowwise() += bias.value().row(0);
    return x.tape().record(std::move(out), {x, weight, bias}, [x, weight, bias](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        if (t.requires_grad(x.id())) t.grad_slot(x.id()).noalias() += g * weight.value();
        if (t.requires_grad(weight.id())) t.grad_slot(weight.id()).noalias() += g.transpose() * x.value();
        if (t.requires_grad(bias.id())) t.grad_slot(bias.id()) += g.colwise().sum();
    });
}

/// x * weight^T without bias.
inline Var linear(const Var& x, const Var& weight) { return ad::matmul_nt(x, weight); }

/// Linear layer whose weight and bias live in a store as "<prefix>.w" / "<prefix>.b".
inline Var dense(Tape& tape, ParameterStore& store, const std::string& prefix, const Var& x) {
    return linear(x, tape.parameter(store, prefix + ".w"), tape.parameter(store, prefix + ".b"));
}

inline void declare_dense(ParameterStore& store, const std::string& prefix, Index in, Index out, double gain = 1.0) {
    store.declare(prefix + ".w", out, in, Init::orthogonal(gain));
    store.declare(prefix + ".b", 1, out, Init::zeros());
}

inline Tensor standard_normal(Index rows, Index cols, Rng& rng) {
    Tensor t(rows, cols);
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
    return t;
}

inline Tensor gumbel_noise(Index rows, Index cols, Rng& rng) {
    Tensor t(rows, cols);
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = rng.gumbel();
    return t;
}

/// Gumbel-Softmax with caller-supplied Gumbel noise (one row per sample).
/// Hard mode returns the one-hot argmax whose gradient is that of the soft sample.
inline Var gumbel_softmax(const Var& logits, double temperature, const Tensor& noise, bool hard) {
    if (!(temperature > 0.0)) throw ParameterError("gumbel_softmax: temperature must be positive");
    if (noise.rows() != logits.rows() || noise.cols() != logits.cols())
        throw DimensionError("gumbel_softmax: noise " + shape_string(noise) + " vs logits " + shape_string(logits.value()));
    Tape& tape = logits.tape();
    Var perturbed = ad::scale(ad::add(logits, tape.constant(noise)), 1.0 / temperature);
    Var soft = ad::softmax(perturbed, 1);
    return hard ? ad::straight_through_onehot(soft) : soft;
}

inline Var gumbel_softmax(const Var& logits, double temperature, Rng& rng, bool hard) {
    if (!(temperature > 0.0)) throw ParameterError("gumbel_softmax: temperature must be positive");
    return gumbel_softmax(logits, temperature, gumbel_noise(logits.rows(), logits.cols(), rng), hard);
}

/// Diagonal Gaussian whose moments live on a tape (one distribution per row).
struct GaussianVar {
    Var mu;
    Var sigma;
};

/// mu + sigma * eps. Gradient reaches mu and sigma; eps is a constant.
inline Var reparameterized_sample(const GaussianVar& g, const Tensor& eps) {
    if (eps.rows() != g.mu.rows() || eps.cols() != g.mu.cols())
        throw DimensionError("reparameterized_sample: noise " + shape_string(eps) + " vs mean " + shape_string(g.mu.value()));
    if ((g.sigma.value().array() <= 0.0).any()) throw ParameterError("reparameterized_sample: sigma must be positive");
    return ad::add(g.mu, ad::mul(g.sigma, g.mu.tape().constant(eps)));
}

inline Var reparameterized_sample(const GaussianVar& g, Rng& rng) {
    return reparameterized_sample(g, standard_normal(g.mu.rows(), g.mu.cols(), rng));
}

/// Standard gated recurrent cell:
///   r = sigmoid(x W_ir^T + b_ir + h W_hr^T + b_hr)
///   z = sigmoid(x W_iz^T + b_iz + h W_hz^T + b_hz)
///   n = tanh(x W_in^T + b_in + r * (h W_hn^T + b_hn))
///   h' = (1 - z) * n + z * h
/// Weights are stored stacked as "<prefix>.w_ih" (3H x I) and "<prefix>.w_hh" (3H x H).
struct GruShape {
    Index input = 0;
    Index hidden = 0;
};

inline void declare_gru(ParameterStore& store, const std::string& prefix, GruShape shape) {
    store.declare(prefix + ".w_ih", 3 * shape.hidden, shape.input, Init::orthogonal(1.0));
    store.declare(prefix + ".w_hh", 3 * shape.hidden, shape.hidden, Init::orthogonal(1.0));
    store.declare(prefix + ".b_ih", 1, 3 * shape.hidden, Init::zeros());
    store.declare(prefix + ".b_hh", 1, 3 * shape.hidden, Init::zeros());
}

inline Var gated_recurrent_step(const Var& input, const Var& hidden, ParameterStore& store, const std::string& prefix) {
    Tape& tape = input.tape();
    Var w_ih = tape.parameter(store, prefix + ".w_ih");
    Var w_hh = tape.parameter(store, prefix + ".w_hh");
    const Index h = w_hh.cols();
    if (w_ih.rows() != 3 * h) throw DimensionError("gated_recurrent_step: malformed weights under '" + prefix + "'");
    if (input.cols() != w_ih.cols())
        throw DimensionError("gated_recurrent_step: input width " + std::to_string(input.cols()) + " but cell expects " +
                             std::to_string(w_ih.cols()));
    if (hidden.cols() != h || hidden.rows() != input.rows())
        throw DimensionError("gated_recurrent_step: hidden " + shape_string(hidden.value()) + " does not fit cell width " +
                             std::to_string(h) + " and batch " + std::to_string(input.rows()));
    Var gi = linear(input, w_ih, tape.parameter(store, prefix + ".b_ih"));
    Var gh = linear(hidden, w_hh, tape.parameter(store, prefix + ".b_hh"));
    Var r = ad::sigmoid(ad::add(ad::slice_cols(gi, 0, h), ad::slice_cols(gh, 0, h)));
    Var z = ad::sigmoid(ad::add(ad::slice_cols(gi, h, h), ad::slice_cols(gh, h, h)));
    Var n = ad::tanh(ad::add(ad::slice_cols(gi, 2 * h, h), ad::mul(r, ad::slice_cols(gh, 2 * h, h))));
    // (1 - z) * n + z * h  ==  n + z * (h - n)
    return ad::add(n, ad::mul(z, ad::sub(hidden, n)));
}

}  // namespace ma2rl
