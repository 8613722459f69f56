#pragma once

#include <cstdint>
#include <string>

#include "ma2rl/errors.hpp"

namespace ma2rl::training {

/// PPO and loop settings. Defaults follow the reference hyperparameter tables
/// where they exist; the rest are desk-scale choices.
struct TrainConfig {
    double lr = 5e-4;
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double clip = 0.2;
    double value_loss_coef = 1.0;
    double recon_loss_coef = 1.0;
    double entropy_coef = 0.01;
    double huber_delta = 10.0;
    double max_grad_norm = 10.0;
    int minibatches = 8;
    int rollout_workers = 8;
    int epochs_per_update = 5;
    int chunk_length = 10;
    bool use_valuenorm = true;
    std::int64_t total_env_steps = 2'000'000;
    std::uint64_t seed = 1;
    int checkpoint_every = 0;  // updates between checkpoints; 0 = final only

    void validate() const {
        auto unit = [](double v, const char* name) {
            if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
        };
        unit(gamma, "train.gamma");
        unit(gae_lambda, "train.gae_lambda");
        if (!(clip > 0.0)) throw ConfigError("train.clip must be positive");
        if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
        if (value_loss_coef < 0.0) throw ConfigError("train.value_loss_coef must be nonnegative");
        if (recon_loss_coef < 0.0) throw ConfigError("train.recon_loss_coef must be nonnegative");
        if (entropy_coef < 0.0) throw ConfigError("train.entropy_coef must be nonnegative");
        if (!(huber_delta > 0.0)) throw ConfigError("train.huber_delta must be positive");
        if (minibatches < 1) throw ConfigError("train.minibatches must be at least 1");
        if (rollout_workers < 1) throw ConfigError("train.rollout_workers must be at least 1");
        if (epochs_per_update < 1) throw ConfigError("train.epochs_per_update must be at least 1");
        if (chunk_length < 1) throw ConfigError("train.chunk_length must be at least 1");
        if (total_env_steps < 0) throw ConfigError("train.total_env_steps must be nonnegative");
        if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be nonnegative");
    }
};

}  // namespace ma2rl::training
