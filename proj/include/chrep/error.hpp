#ifndef CHREP_ERROR_HPP
#define CHREP_ERROR_HPP

#include <stdexcept>
#include <string>

namespace chrep {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A computation produced NaN or infinity. The message names the operation.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A caller broke a documented precondition (non-scalar backward root, non-unit rows, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Bad configuration values or inconsistent options.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed data (negative counts, missing spots, unparsable CSV).
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// A leave-one-slide-out fold cannot be built (empty training set, unknown slide).
class InvalidFold : public Error {
public:
    using Error::Error;
};

/// Gallery lookup with no admissible candidates.
class RetrievalError : public Error {
public:
    using Error::Error;
};

/// The finite-difference oracle detected a non-deterministic loss builder.
class OracleError : public Error {
public:
    using Error::Error;
};

/// File system failure while reading or writing artifacts.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace chrep

#endif
