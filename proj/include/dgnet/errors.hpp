#pragma once

#include <stdexcept>
#include <string>

namespace dgnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree with what an operation requires.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value (groups, weights, tile counts, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// API misuse: backward on a non-scalar, tape-attached pseudo-label input, ...
class UsageError : public Error {
public:
    using Error::Error;
};

/// Input data outside the accepted domain (e.g. pixel values outside [0,1]).
class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Corrupt or truncated checkpoint, version mismatch.
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss during training.
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace dgnet
