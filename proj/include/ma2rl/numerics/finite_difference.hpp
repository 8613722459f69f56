#pragma once

#include <algorithm>
#include <functional>

#include "ma2rl/numerics/parameter_store.hpp"

namespace ma2rl {

/// Central differences (f(x+h) - f(x-h)) / 2h for every coordinate of the
/// store, flattened in declaration order. The store is restored afterwards.
inline Eigen::VectorXd finite_difference_gradient(const std::function<double(ParameterStore&)>& f,
                                                  ParameterStore& store, double h) {
    Eigen::VectorXd grad(store.parameter_count());
    Index offset = 0;
    for (std::size_t e = 0; e < store.size(); ++e) {
        Tensor& v = store.entry(e).value;
        for (Index i = 0; i < v.size(); ++i) {
            const double saved = v.data()[i];
            v.data()[i] = saved + h;
            const double up = f(store);
            v.data()[i] = saved - h;
            const double down = f(store);
            v.data()[i] = saved;
            grad[offset + i] = (up - down) / (2.0 * h);
        }
        offset += v.size();
    }
    return grad;
}

/// Scalar-function variant used for plain tensors.
inline Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, Tensor x, double h) {
    Tensor grad(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i) {
        const double saved = x.data()[i];
        x.data()[i] = saved + h;
        const double up = f(x);
        x.data()[i] = saved - h;
        const double down = f(x);
        x.data()[i] = saved;
        grad.data()[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

/// ||a - b|| / max(||a||, ||b||, floor): the comparison used by gradient checks.
inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-8) {
    const double denom = std::max({a.norm(), b.norm(), floor});
    return (a - b).norm() / denom;
}

}  // namespace ma2rl
