#pragma once

#include <stdexcept>
#include <string>

namespace ma2rl {

// Shapes that do not line up (matmul inner dims, widths of recurrent cells, ...).
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Out-of-domain scalar arguments (temperature <= 0, nonpositive sigma, ...).
struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Caller broke a documented precondition.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Optimizer or store used in an invalid state (e.g. stepping without gradients).
struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};

// Non-finite values escaped a numeric operation.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint cannot be read or does not fit the requested model.
struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace ma2rl
