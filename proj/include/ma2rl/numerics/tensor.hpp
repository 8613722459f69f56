#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "ma2rl/errors.hpp"

namespace ma2rl {

/// Dense row-major real matrix. Vectors are 1 x n rows; scalars are 1 x 1.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

inline std::string shape_string(const Tensor& t) {
    std::ostringstream os;
    os << '[' << t.rows() << 'x' << t.cols() << ']';
    return os.str();
}

inline std::string shape_string(Index rows, Index cols) {
    std::ostringstream os;
    os << '[' << rows << 'x' << cols << ']';
    return os.str();
}

inline Tensor row_vector(std::initializer_list<double> values) {
    Tensor t(1, static_cast<Index>(values.size()));
    Index i = 0;
    for (double v : values) t(0, i++) = v;
    return t;
}

inline Tensor row_vector(const std::vector<double>& values) {
    Tensor t(1, static_cast<Index>(values.size()));
    for (Index i = 0; i < t.cols(); ++i) t(0, i) = values[static_cast<std::size_t>(i)];
    return t;
}

inline Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const auto r = static_cast<Index>(rows.size());
    const auto c = r == 0 ? Index{0} : static_cast<Index>(rows.begin()->size());
    Tensor t(r, c);
    Index i = 0;
    for (const auto& row : rows) {
        if (static_cast<Index>(row.size()) != c) throw DimensionError("ragged matrix literal");
        Index j = 0;
        for (double v : row) t(i, j++) = v;
        ++i;
    }
    return t;
}

inline Tensor scalar_tensor(double v) {
    Tensor t(1, 1);
    t(0, 0) = v;
    return t;
}

inline bool all_finite(const Tensor& t) { return t.allFinite(); }

inline void require_finite(const Tensor& t, const char* where) {
    if (!t.allFinite()) throw NumericError(std::string("non-finite value produced by ") + where);
}

}  // namespace ma2rl
