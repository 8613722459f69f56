#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ma2rl/model_config.hpp"
#include "ma2rl/numerics/layers.hpp"

namespace ma2rl::latent {

inline constexpr double kSigmaMin = 1e-3;
inline constexpr double kSigmaMax = 10.0;
inline const double kLogSigmaMin = std::log(kSigmaMin);
inline const double kLogSigmaMax = std::log(kSigmaMax);

/// Belief over one entity (or a fused set of entities).
struct DiagonalGaussian {
    Tensor mu;     // 1 x D
    Tensor sigma;  // 1 x D, entries in [1e-3, 10]

    [[nodiscard]] Index dim() const { return mu.cols(); }
};

// Parameter prefixes of the two autoencoders.
inline const std::string kObsEncoder = "obs_enc";
inline const std::string kObsDecoder = "obs_dec";
inline const std::string kStateEncoder = "state_enc";
inline const std::string kStateDecoder = "state_dec";

/// Two-layer tanh perceptron encoder: F -> hidden -> (mu, log sigma).
inline void declare_encoder(ParameterStore& store, const std::string& prefix, const ModelConfig& m) {
    declare_dense(store, prefix + ".l1", m.features, m.mlp_hidden);
    declare_dense(store, prefix + ".l2", m.mlp_hidden, 2 * m.latent);
}

/// Two-layer tanh perceptron decoder: D -> hidden -> F.
inline void declare_decoder(ParameterStore& store, const std::string& prefix, const ModelConfig& m) {
    declare_dense(store, prefix + ".l1", m.latent, m.mlp_hidden);
    declare_dense(store, prefix + ".l2", m.mlp_hidden, m.features);
}

inline void declare_vae_pair(ParameterStore& store, const ModelConfig& m) {
    declare_encoder(store, kObsEncoder, m);
    declare_decoder(store, kObsDecoder, m);
    declare_encoder(store, kStateEncoder, m);
    declare_decoder(store, kStateDecoder, m);
}

/// sigma = exp(clamp(log sigma, ln 1e-3, ln 10)); exp(ln 10) rounds above 10, hence the outer clamp
inline Var sigma_from_log(const Var& log_sigma) {
    return ad::clamp(ad::exp(ad::clamp(log_sigma, kLogSigmaMin, kLogSigmaMax)), kSigmaMin, kSigmaMax);
}

/// Row-wise encoding of entity rows into per-row Gaussians.
inline GaussianVar encode(Tape& tape, ParameterStore& store, const std::string& prefix, const Var& rows) {
    Var hidden = ad::tanh(dense(tape, store, prefix + ".l1", rows));
    Var out = dense(tape, store, prefix + ".l2", hidden);
    const Index d = out.cols() / 2;
    return {ad::slice_cols(out, 0, d), sigma_from_log(ad::slice_cols(out, d, d))};
}

inline Var decode(Tape& tape, ParameterStore& store, const std::string& prefix, const Var& z) {
    return dense(tape, store, prefix + ".l2", ad::tanh(dense(tape, store, prefix + ".l1", z)));
}

/// Precision-weighted fusion of consecutive groups of `group` rows, counting
/// only rows whose weight is 1 (weights: (B*group) x 1 of {0,1}).
///   lambda = sum w/sigma^2, mu = (sum w mu/sigma^2)/lambda, sigma = clamp(lambda^-1/2)
inline GaussianVar gaussian_product_rows(const GaussianVar& rows, const Tensor& weights, Index group) {
    Tape& tape = rows.mu.tape();
    if (weights.rows() != rows.mu.rows() || weights.cols() != 1)
        throw DimensionError("gaussian_product_rows: weights " + shape_string(weights) + " for " + shape_string(rows.mu.value()));
    for (Index b = 0; b < weights.rows() / group; ++b)
        if (weights.middleRows(b * group, group).sum() <= 0.0)
            throw ContractError("gaussian_product: empty set of Gaussians");
    Var precision = ad::mul(ad::reciprocal(ad::square(rows.sigma)), tape.constant(weights));
    Var lambda = ad::segment_sum(precision, group);
    Var weighted_mu = ad::segment_sum(ad::mul(precision, rows.mu), group);
    Var mu = ad::div(weighted_mu, lambda);
    Var sigma = ad::clamp(ad::sqrt(ad::reciprocal(lambda)), kSigmaMin, kSigmaMax);
    return {mu, sigma};
}

/// Elementwise product of same-shaped Gaussians (one distribution per row).
inline GaussianVar gaussian_product(std::span<const GaussianVar> parts) {
    if (parts.empty()) throw ContractError("gaussian_product: empty list");
    Var lambda = ad::reciprocal(ad::square(parts[0].sigma));
    Var weighted_mu = ad::mul(lambda, parts[0].mu);
    for (std::size_t k = 1; k < parts.size(); ++k) {
        if (parts[k].mu.cols() != parts[0].mu.cols() || parts[k].mu.rows() != parts[0].mu.rows())
            throw DimensionError("gaussian_product: dimensions differ");
        Var p = ad::reciprocal(ad::square(parts[k].sigma));
        lambda = ad::add(lambda, p);
        weighted_mu = ad::add(weighted_mu, ad::mul(p, parts[k].mu));
    }
    return {ad::div(weighted_mu, lambda), ad::clamp(ad::sqrt(ad::reciprocal(lambda)), kSigmaMin, kSigmaMax)};
}

inline GaussianVar gaussian_product(const GaussianVar& a, const GaussianVar& b) {
    const GaussianVar parts[] = {a, b};
    return gaussian_product(std::span<const GaussianVar>(parts));
}

/// Value-level fusion of a nonempty list of beliefs.
inline DiagonalGaussian gaussian_product(const std::vector<DiagonalGaussian>& gs) {
    if (gs.empty()) throw ContractError("gaussian_product: empty list");
    Tape tape(false);
    std::vector<GaussianVar> parts;
    for (const auto& g : gs) {
        if (g.dim() != gs[0].dim()) throw DimensionError("gaussian_product: dimensions differ");
        parts.push_back({tape.constant(g.mu), tape.constant(g.sigma)});
    }
    GaussianVar r = gaussian_product(std::span<const GaussianVar>(parts));
    return {r.mu.value(), r.sigma.value()};
}

/// Squared reconstruction error per row, summed over features: (rows x 1).
inline Var row_squared_error(const Var& target, const Var& prediction) {
    return ad::row_sum(ad::square(ad::sub(target, prediction)));
}

struct VaeLossTerms {
    Var obs;    // mean over observed rows
    Var state;  // mean over all state rows
    Var total;
};

/// Reconstruction objective of both autoencoders with one reparameterized
/// sample per row. obs_mask selects which observation rows count.
inline VaeLossTerms vae_loss(Tape& tape, ParameterStore& store, const Tensor& obs_rows, const Tensor& obs_mask,
                             const Tensor& state_rows, const Tensor& obs_noise, const Tensor& state_noise,
                             double kl_weight = 0.0) {
    if (obs_rows.rows() == 0 || state_rows.rows() == 0) throw ContractError("vae_loss: empty batch");
    const double observed = obs_mask.sum();
    if (observed <= 0.0) throw ContractError("vae_loss: no observed rows");
    Var o = tape.constant(obs_rows);
    GaussianVar go = encode(tape, store, kObsEncoder, o);
    Var ro = decode(tape, store, kObsDecoder, reparameterized_sample(go, obs_noise));
    Var lo = ad::scale(ad::sum(ad::mul(row_squared_error(o, ro), tape.constant(obs_mask))), 1.0 / observed);

    Var s = tape.constant(state_rows);
    GaussianVar gs = encode(tape, store, kStateEncoder, s);
    Var rs = decode(tape, store, kStateDecoder, reparameterized_sample(gs, state_noise));
    Var ls = ad::mean(row_squared_error(s, rs));

    Var total = ad::add(lo, ls);
    if (kl_weight > 0.0) {
        // KL(N(mu, sigma) || N(0, 1)) summed over latent dims, averaged over rows
        auto kl = [&](const GaussianVar& g, const Tensor* mask, double count) {
            Var per = ad::scale(ad::row_sum(ad::sub(ad::add(ad::square(g.mu), ad::square(g.sigma)),
                                                    ad::add_scalar(ad::scale(ad::log(g.sigma), 2.0), 1.0))),
                                0.5);
            if (mask) per = ad::mul(per, tape.constant(*mask));
            return ad::scale(ad::sum(per), 1.0 / count);
        };
        total = ad::add(total, ad::scale(ad::add(kl(go, &obs_mask, observed),
                                                 kl(gs, nullptr, static_cast<double>(state_rows.rows()))),
                                         kl_weight));
    }
    return {lo, ls, total};
}

// ---------------------------------------------------------------------------
// Single-row conveniences over immutable parameters.

inline DiagonalGaussian encode_row(ParameterStore& store, const std::string& prefix, const Tensor& row) {
    Tape tape(false);
    GaussianVar g = encode(tape, store, prefix, tape.constant(row));
    return {g.mu.value(), g.sigma.value()};
}

inline DiagonalGaussian encode_obs(ParameterStore& store, const Tensor& row) { return encode_row(store, kObsEncoder, row); }
inline DiagonalGaussian encode_state(ParameterStore& store, const Tensor& row) {
    return encode_row(store, kStateEncoder, row);
}

inline Tensor decode_obs(ParameterStore& store, const Tensor& z) {
    Tape tape(false);
    return decode(tape, store, kObsDecoder, tape.constant(z)).value();
}

inline Tensor decode_state(ParameterStore& store, const Tensor& z) {
    Tape tape(false);
    return decode(tape, store, kStateDecoder, tape.constant(z)).value();
}

/// Scalar VAE loss with noise drawn from rng (obs noise first, then state noise).
inline double vae_loss(ParameterStore& store, const Tensor& obs_rows, const Tensor& obs_mask, const Tensor& state_rows,
                       Index latent, Rng& rng, double kl_weight = 0.0) {
    Tape tape(false);
    const Tensor on = standard_normal(obs_rows.rows(), latent, rng);
    const Tensor sn = standard_normal(state_rows.rows(), latent, rng);
    return vae_loss(tape, store, obs_rows, obs_mask, state_rows, on, sn, kl_weight).total.item();
}

}  // namespace ma2rl::latent
