#pragma once

#include <stdexcept>
#include <string>

namespace xlsor {

// Error taxonomy used across the library. Everything derives from Error so
// callers can catch one base type at the process boundary.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand shapes disagree (channel mismatch, add on different shapes, ...).
struct ShapeError : Error {
    using Error::Error;
};

// A scalar argument is out of its admissible range.
struct ArgumentError : Error {
    using Error::Error;
};

// A configuration document is malformed or inconsistent.
struct ConfigError : Error {
    using Error::Error;
};

// Dataset or mask content violates its contract.
struct InputError : Error {
    using Error::Error;
};

// An operation was called before its required state existed.
struct StateError : Error {
    using Error::Error;
};

// A metric has no defined value for the given operands.
struct UndefinedMetricError : Error {
    using Error::Error;
};

// An API contract was violated (e.g. backward on a non-scalar).
struct ContractError : Error {
    using Error::Error;
};

} // namespace xlsor
