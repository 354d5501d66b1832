#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xferlab {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A setting or hyperparameter is invalid.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data is malformed or inconsistent.
class DataError : public Error {
public:
    using Error::Error;
};

/// A schedule was queried outside of its current cycle.
class ScheduleStateError : public Error {
public:
    using Error::Error;
};

/// Stages of the transfer protocol were invoked out of order.
class ProtocolOrderError : public Error {
public:
    using Error::Error;
};

/// Filesystem read or write failed.
class IoError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::size_t iteration)
        : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}

    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

}  // namespace xferlab
