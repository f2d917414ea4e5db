#pragma once

#include <stdexcept>
#include <string>

namespace ffebm {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Non-finite or exploding values during a relaxation or adjoint sweep.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int block = -1, int step = -1, int beta_sign = 0)
        : Error(what), block_(block), step_(step), beta_sign_(beta_sign) {}

    int block() const noexcept { return block_; }
    int step() const noexcept { return step_; }
    int beta_sign() const noexcept { return beta_sign_; }

private:
    int block_;
    int step_;
    int beta_sign_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed files: bad magic, truncation, misaligned records.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Invalid input data, e.g. labels outside the class range.
class DataError : public Error {
public:
    using Error::Error;
};

/// API misuse: missing or stale caches, mismatched key sets.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Batch statistics that cannot be formed (batch norm with B < 2).
class StatisticsError : public Error {
public:
    using Error::Error;
};

/// Internal bookkeeping that points outside its tensor.
class CorruptionError : public Error {
public:
    using Error::Error;
};

/// An operation's documented precondition does not hold for its inputs.
class PreconditionError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace ffebm
