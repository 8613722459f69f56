#pragma once

#include <string>

#include "ma2rl/latent.hpp"

namespace ma2rl::maskinfer {

using latent::DiagonalGaussian;

inline const std::string kCell = "mae.gru";
inline const std::string kHead = "mae.head";

/// Recurrent cell over sampled observed beliefs plus one linear head emitting
/// (mu, log sigma) of the masked-entity belief.
inline void declare(ParameterStore& store, const ModelConfig& m) {
    declare_gru(store, kCell, {m.latent, m.rnn_hidden});
    declare_dense(store, kHead, m.rnn_hidden, 2 * m.latent);
}

struct Inference {
    GaussianVar masked;
    Var hidden;
};

/// Sample from the observed belief, advance the recurrent state, read off the masked belief.
inline Inference infer_masked(const GaussianVar& observed, const Var& h_prev, const Tensor& noise, ParameterStore& store) {
    Tape& tape = observed.mu.tape();
    Var x = reparameterized_sample(observed, noise);
    Var h = gated_recurrent_step(x, h_prev, store, kCell);
    Var out = dense(tape, store, kHead, h);
    const Index d = out.cols() / 2;
    return {{ad::slice_cols(out, 0, d), latent::sigma_from_log(ad::slice_cols(out, d, d))}, h};
}

inline GaussianVar integrate(const GaussianVar& observed, const GaussianVar& masked) {
    return latent::gaussian_product(observed, masked);
}

/// Per-row squared distance between one sample of each belief: (B x 1).
inline Var reconstruction_loss(const GaussianVar& integration, const GaussianVar& states, const Tensor& integration_noise,
                               const Tensor& state_noise) {
    if (integration.mu.cols() != states.mu.cols()) throw DimensionError("reconstruction_loss: dimensions differ");
    Var y = reparameterized_sample(states, state_noise);
    Var x = reparameterized_sample(integration, integration_noise);
    return ad::row_sum(ad::square(ad::sub(y, x)));
}

/// Inputs for a batch of B (agent, step) samples over sets of m entities.
struct MaeInputs {
    Index set_size = 0;  // m
    Tensor obs;          // (B*m) x F, zero rows where unobserved
    Tensor mask;         // (B*m) x 1
    Tensor state;        // (B*m) x F, agent-relative entity-states
};

struct MaeNoise {
    Tensor observed;     // B x D, sample fed to the recurrent cell
    Tensor integration;  // B x D, x in the reconstruction loss
    Tensor state;        // B x D, y in the reconstruction loss
};

struct MaeOutput {
    GaussianVar observed;
    GaussianVar states;
    GaussianVar masked;
    GaussianVar integration;
    Var hidden;
    Var recon;  // B x 1
};

/// Encode observed rows, fuse them, infer the masked belief, integrate, encode
/// and fuse all state rows, score the integration against the state belief.
inline MaeOutput mae_forward(Tape& tape, ParameterStore& store, const MaeInputs& in, const Var& h_prev, const MaeNoise& noise) {
    const Index m = in.set_size;
    if (m <= 0 || in.obs.rows() % m != 0 || in.obs.rows() != in.state.rows() || in.mask.rows() != in.obs.rows())
        throw DimensionError("mae_forward: inconsistent batch shapes");
    MaeOutput out;
    GaussianVar obs_rows = latent::encode(tape, store, latent::kObsEncoder, tape.constant(in.obs));
    out.observed = latent::gaussian_product_rows(obs_rows, in.mask, m);
    Inference inf = infer_masked(out.observed, h_prev, noise.observed, store);
    out.masked = inf.masked;
    out.hidden = inf.hidden;
    out.integration = integrate(out.observed, out.masked);
    GaussianVar state_rows = latent::encode(tape, store, latent::kStateEncoder, tape.constant(in.state));
    out.states = latent::gaussian_product_rows(state_rows, Tensor::Ones(in.state.rows(), 1), m);
    out.recon = reconstruction_loss(out.integration, out.states, noise.integration, noise.state);
    return out;
}

// ---------------------------------------------------------------------------
// Single-sample conveniences over immutable parameters.

struct MaeResult {
    DiagonalGaussian masked;
    double recon = 0.0;
    Tensor hidden;  // 1 x H
};

inline MaeNoise draw_noise(Index batch, Index latent_dim, Rng& rng) {
    MaeNoise n;
    n.observed = standard_normal(batch, latent_dim, rng);
    n.integration = standard_normal(batch, latent_dim, rng);
    n.state = standard_normal(batch, latent_dim, rng);
    return n;
}

inline MaeResult mae_forward(ParameterStore& store, const arena::EntityObservation& obs, const Tensor& agent_state,
                             const Tensor& h_prev, Rng& rng) {
    Tape tape(false);
    MaeInputs in{obs.rows.rows(), obs.rows, obs.mask, agent_state};
    const Index d = store.value(kHead + ".w").rows() / 2;
    MaeOutput out = mae_forward(tape, store, in, tape.constant(h_prev), draw_noise(1, d, rng));
    return {{out.masked.mu.value(), out.masked.sigma.value()}, out.recon.item(), out.hidden.value()};
}

inline DiagonalGaussian integrate(const DiagonalGaussian& observed, const DiagonalGaussian& masked) {
    return latent::gaussian_product(std::vector<DiagonalGaussian>{observed, masked});
}

}  // namespace ma2rl::maskinfer
