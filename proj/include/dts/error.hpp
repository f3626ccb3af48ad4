#pragma once

#include <stdexcept>
#include <string>

namespace dts {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for an operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent input data (event logs, sample files, vocabularies).
class DataError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or solver failures.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or arguments supplied by the caller.
class UsageError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public DataError {
public:
    enum class Kind { malformed_json, version_mismatch, shape_mismatch, missing_field };

    CheckpointError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

} // namespace dts
