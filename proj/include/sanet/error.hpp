#pragma once

#include <stdexcept>
#include <string>

namespace sanet {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid hyperparameters or network configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Tensor shapes that cannot be combined by the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Data that violates a domain contract (label values, nesting, empty lists).
class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Training hit a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace sanet
