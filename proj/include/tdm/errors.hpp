#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tdm {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed header / missing required column in an input file.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// Input data unusable as a whole (e.g. row-error fraction above threshold).
class DataError : public Error {
public:
    using Error::Error;
};

/// Precondition violation: unknown id, negative volume, out-of-range argument.
class DomainError : public Error {
public:
    using Error::Error;
};

class NoPathError : public Error {
public:
    using Error::Error;
};

/// Instance exceeds an enumeration or memory limit.
class SizeError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss during model training.
class TrainingError : public Error {
public:
    using Error::Error;
};

class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// Config or artifact validation failure; maps to CLI exit code 1.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// One recoverable per-row problem. `line` is 1-based within the source
/// (file line for CSV input, record index for in-memory spans).
struct RowError {
    std::size_t line = 0;
    std::string message;
};

}  // namespace tdm
