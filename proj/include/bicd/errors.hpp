#pragma once

#include <stdexcept>
#include <string>

namespace bicd {

// Error taxonomy. The CLI maps these onto exit codes (see cli.hpp).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct DomainError : Error {
    using Error::Error;
};

/// A matrix that should be unit lower triangular is not.
struct StructureError : Error {
    using Error::Error;
};

/// Non-finite values, non-convergence, NaN gradients.
struct NumericError : Error {
    using Error::Error;
};

struct ContractError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

/// Malformed or inconsistent dataset / checkpoint files.
struct DataError : Error {
    using Error::Error;
};

}  // namespace bicd
