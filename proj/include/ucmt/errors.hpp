#pragma once

#include <stdexcept>
#include <string>

namespace ucmt {

// Invalid hyperparameters, layer specs or method/mix combinations.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Tensor or label geometry does not match what an operation expects.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Region grid cannot be laid over an image.
class GeometryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Caller broke an operation precondition (empty batch, k out of range, ...).
class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input data violates a documented invariant (e.g. unnormalized distribution).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Non-finite loss or gradient during training.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ucmt
