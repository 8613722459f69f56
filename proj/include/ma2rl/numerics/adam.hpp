#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ma2rl/numerics/parameter_store.hpp"

namespace ma2rl {

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-5;
    double max_grad_norm = 0.0;  // <= 0 disables global-norm clipping
};

/// First/second moment estimates for a named group of store entries.
class Adam {
public:
    Adam() = default;
    Adam(const ParameterStore& store, std::vector<std::string> names, AdamConfig config)
        : names_(std::move(names)), config_(config) {
        for (const auto& n : names_) {
            const Tensor& v = store.value(n);
            m_.push_back(Tensor::Zero(v.rows(), v.cols()));
            v_.push_back(Tensor::Zero(v.rows(), v.cols()));
        }
    }

    /// All entries of the store, in declaration order.
    static Adam over_all(const ParameterStore& store, AdamConfig config) {
        std::vector<std::string> names;
        for (const auto& e : store.entries()) names.push_back(e.name);
        return Adam(store, std::move(names), config);
    }

    [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }
    [[nodiscard]] const AdamConfig& config() const noexcept { return config_; }
    AdamConfig& config() noexcept { return config_; }
    [[nodiscard]] long steps() const noexcept { return t_; }

    /// Global L2 norm of the group's current gradients.
    [[nodiscard]] double grad_norm(const ParameterStore& store) const {
        double s = 0.0;
        for (const auto& n : names_) s += store.grad(n).squaredNorm();
        return std::sqrt(s);
    }

    /// One bias-corrected Adam update; gradients of the group are zeroed
    /// afterwards. Returns the gradient norm before clipping.
    double step(ParameterStore& store) {
        for (const auto& n : names_)
            if (!store.entry(n).grad_ready)
                throw StateError("adam_step: no gradient has been computed for '" + n + "'");
        const double norm = grad_norm(store);
        double clip = 1.0;
        if (config_.max_grad_norm > 0.0 && norm > config_.max_grad_norm) clip = config_.max_grad_norm / (norm + 1e-6);
        ++t_;
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < names_.size(); ++i) {
            ParameterEntry& e = store.entry(names_[i]);
            const Tensor g = e.grad * clip;
            m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
            v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
            const auto m_hat = m_[i].array() / bc1;
            const auto v_hat = v_[i].array() / bc2;
            e.value.array() -= config_.lr * m_hat / (v_hat.sqrt() + config_.eps);
            e.grad.setZero();
            e.grad_ready = false;
        }
        return norm;
    }

private:
    std::vector<std::string> names_;
    AdamConfig config_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    long t_ = 0;
};

inline double adam_step(ParameterStore& store, Adam& optimizer) { return optimizer.step(store); }

}  // namespace ma2rl
