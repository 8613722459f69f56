#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ma2rl/errors.hpp"

namespace ma2rl::training {

struct Advantages {
    std::vector<double> advantages;
    std::vector<double> returns;  // advantage + value, the critic's regression target
};

/// GAE(gamma, lambda) over one episode. `bootstrap` is V(s_T) after the last
/// step (0 when the episode terminated rather than hit the time limit).
inline Advantages generalized_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                                         double bootstrap, double gamma, double lambda) {
    if (rewards.size() != values.size()) throw DimensionError("generalized_advantages: rewards and values differ in length");
    const std::size_t n = rewards.size();
    Advantages out;
    out.advantages.assign(n, 0.0);
    out.returns.assign(n, 0.0);
    double gae = 0.0;
    double next = bootstrap;
    for (std::size_t t = n; t-- > 0;) {
        const double delta = rewards[t] + gamma * next - values[t];
        gae = delta + gamma * lambda * gae;
        out.advantages[t] = gae;
        out.returns[t] = gae + values[t];
        next = values[t];
    }
    return out;
}

/// In-place standardization to zero mean and unit variance (population std).
inline void standardize(std::vector<double>& xs, double eps = 1e-5) {
    if (xs.empty()) return;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    const double sd = std::sqrt(var) + eps;
    for (double& x : xs) x = (x - mean) / sd;
}

/// Running normalizer for value targets: debiased exponential moving moments
/// of the returns seen so far.
class ValueNorm {
public:
    explicit ValueNorm(double beta = 0.99999, double eps = 1e-5) : beta_(beta), eps_(eps) {}

    void update(const std::vector<double>& xs) {
        if (xs.empty()) return;
        double m = 0.0, sq = 0.0;
        for (double x : xs) m += x, sq += x * x;
        m /= static_cast<double>(xs.size());
        sq /= static_cast<double>(xs.size());
        mean_ = beta_ * mean_ + (1.0 - beta_) * m;
        mean_sq_ = beta_ * mean_sq_ + (1.0 - beta_) * sq;
        debias_ = beta_ * debias_ + (1.0 - beta_);
    }

    [[nodiscard]] double mean() const { return mean_ / std::max(debias_, eps_); }
    [[nodiscard]] double var() const {
        const double mu = mean();
        return std::max(mean_sq_ / std::max(debias_, eps_) - mu * mu, 1e-2);
    }
    [[nodiscard]] double normalize(double x) const { return (x - mean()) / std::sqrt(var()); }
    [[nodiscard]] double denormalize(double x) const { return x * std::sqrt(var()) + mean(); }

    // raw moments, for checkpointing
    double mean_ = 0.0;
    double mean_sq_ = 0.0;
    double debias_ = 0.0;

private:
    double beta_;
    double eps_;
};

}  // namespace ma2rl::training
