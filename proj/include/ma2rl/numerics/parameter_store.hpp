#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ma2rl/errors.hpp"
#include "ma2rl/numerics/rng.hpp"
#include "ma2rl/numerics/tensor.hpp"

namespace ma2rl {

struct Init {
    enum class Kind { zeros, orthogonal, constant };
    Kind kind = Kind::zeros;
    double gain = 1.0;  // orthogonal gain, or the fill value for constant

    static Init zeros() { return {Kind::zeros, 0.0}; }
    static Init orthogonal(double gain = 1.0) { return {Kind::orthogonal, gain}; }
    static Init constant(double value) { return {Kind::constant, value}; }
};

/// Orthogonal matrix of the given shape scaled by gain: QR of a Gaussian draw
/// with the sign of R's diagonal folded into Q so the result is unique.
inline Tensor orthogonal_matrix(Index rows, Index cols, double gain, Rng& rng) {
    const Index big = std::max(rows, cols);
    const Index small = std::min(rows, cols);
    Eigen::MatrixXd draw(big, small);
    for (Index i = 0; i < big; ++i)
        for (Index j = 0; j < small; ++j) draw(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(draw);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
    const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(small, small);
    for (Index j = 0; j < small; ++j)
        if (r(j, j) < 0) q.col(j) *= -1.0;
    Tensor out(rows, cols);
    if (rows >= cols)
        out = q;
    else
        out = q.transpose();
    return out * gain;
}

struct ParameterEntry {
    std::string name;
    Tensor value;
    Tensor grad;
    bool grad_ready = false;  // set once a backward pass has touched this entry
};

/// Named trainable tensors with paired gradient slots, in declaration order.
///
/// Initial values are drawn from the store's own generator in declaration
/// order, so two stores with the same seed and declarations are identical.
class ParameterStore {
public:
    explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

    Tensor& declare(const std::string& name, Index rows, Index cols, Init init) {
        if (rows <= 0 || cols <= 0) throw DimensionError("parameter '" + name + "' needs a positive shape");
        if (index_.contains(name)) throw ContractError("parameter '" + name + "' declared twice");
        ParameterEntry entry{name, Tensor::Zero(rows, cols), Tensor::Zero(rows, cols), false};
        switch (init.kind) {
            case Init::Kind::zeros: break;
            case Init::Kind::constant: entry.value.setConstant(init.gain); break;
            case Init::Kind::orthogonal: entry.value = orthogonal_matrix(rows, cols, init.gain, rng_); break;
        }
        index_.emplace(name, entries_.size());
        entries_.push_back(std::move(entry));
        return entries_.back().value;
    }

    [[nodiscard]] bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

    [[nodiscard]] std::size_t index_of(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
        return it->second;
    }

    ParameterEntry& entry(std::string_view name) { return entries_[index_of(name)]; }
    const ParameterEntry& entry(std::string_view name) const { return entries_[index_of(name)]; }
    ParameterEntry& entry(std::size_t i) { return entries_.at(i); }
    const ParameterEntry& entry(std::size_t i) const { return entries_.at(i); }

    Tensor& value(std::string_view name) { return entry(name).value; }
    const Tensor& value(std::string_view name) const { return entry(name).value; }
    Tensor& grad(std::string_view name) { return entry(name).grad; }
    const Tensor& grad(std::string_view name) const { return entry(name).grad; }

    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] const std::vector<ParameterEntry>& entries() const noexcept { return entries_; }
    std::vector<ParameterEntry>& entries() noexcept { return entries_; }

    [[nodiscard]] Index parameter_count() const {
        Index n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) {
            e.grad.setZero();
            e.grad_ready = false;
        }
    }

    [[nodiscard]] Eigen::VectorXd flat_values() const { return flatten(&ParameterEntry::value); }
    [[nodiscard]] Eigen::VectorXd flat_grads() const { return flatten(&ParameterEntry::grad); }

    void set_flat_values(const Eigen::VectorXd& flat) {
        if (flat.size() != parameter_count()) throw DimensionError("flat parameter vector has wrong length");
        Index offset = 0;
        for (auto& e : entries_) {
            for (Index i = 0; i < e.value.size(); ++i) e.value.data()[i] = flat[offset + i];
            offset += e.value.size();
        }
    }

    /// Entry names starting with the given prefix, in declaration order.
    [[nodiscard]] std::vector<std::string> names_with_prefix(std::string_view prefix) const {
        std::vector<std::string> out;
        for (const auto& e : entries_)
            if (e.name.starts_with(prefix)) out.push_back(e.name);
        return out;
    }

private:
    Eigen::VectorXd flatten(Tensor ParameterEntry::*field) const {
        Eigen::VectorXd out(parameter_count());
        Index offset = 0;
        for (const auto& e : entries_) {
            const Tensor& t = e.*field;
            for (Index i = 0; i < t.size(); ++i) out[offset + i] = t.data()[i];
            offset += t.size();
        }
        return out;
    }

    std::uint64_t seed_;
    Rng rng_;
    std::vector<ParameterEntry> entries_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace ma2rl
