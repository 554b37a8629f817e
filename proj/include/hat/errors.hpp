#pragma once

#include <stdexcept>
#include <string>

namespace hat {

// Shape/dimension disagreement between operands.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A precondition of an operation was violated (non-scalar loss, empty pool, ...).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf encountered where a finite value is required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File I/O failures. Subtypes are distinct so callers (and tests) can tell
// a bad magic from a bad version from a short read.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MagicError : IoError {
    using IoError::IoError;
};
struct VersionError : IoError {
    using IoError::IoError;
};
struct TruncatedError : IoError {
    using IoError::IoError;
};

}  // namespace hat
