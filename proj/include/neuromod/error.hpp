#pragma once

#include <stdexcept>
#include <string>

namespace neuromod {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A hyperparameter or argument lies outside its valid range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// A cosine was requested for a zero-norm column.
class SingularityError : public Error {
public:
    using Error::Error;
};

/// Cached forward intermediates do not belong to the parameters they are used with.
class ConsistencyError : public Error {
public:
    using Error::Error;
};

class EmptyInputError : public Error {
public:
    using Error::Error;
};

/// Adapters built on different frozen projections (or base weights) cannot be merged.
class IncompatibleError : public Error {
public:
    using Error::Error;
};

/// An accuracy matrix is missing entries required by a metric.
class IncompleteMatrixError : public Error {
public:
    using Error::Error;
};

/// Invalid run configuration or command-line usage. Maps to exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or tampered persisted file. Maps to exit code 2.
class FormatError : public Error {
public:
    using Error::Error;
};

} // namespace neuromod
