#pragma once

#include <stdexcept>
#include <string>

namespace layergen {

// Error taxonomy shared by all modules. Every failure mode surfaced by the
// public API maps onto one of these so callers (and the CLI exit-code
// mapping) can dispatch on type rather than parse messages.

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/matrix shape disagreement.
struct DimensionError : Error {
    using Error::Error;
};

// Rect/crop/paste geometry violations.
struct GeometryError : Error {
    using Error::Error;
};

// Invariant violation on a domain value (layout, mask, plan, ...).
struct ValidationError : Error {
    using Error::Error;
};

// Bad or inconsistent configuration (lengths, ranges, missing pieces).
struct ConfigurationError : Error {
    using Error::Error;
};

// Malformed input document.
struct ParseError : Error {
    using Error::Error;
};

// A cell of the grid is not covered by any piece in overwrite mode.
struct CoverageError : Error {
    using Error::Error;
};

// Id not present in a database or index.
struct LookupError : Error {
    using Error::Error;
};

// Operation applied to an entity outside its scope (e.g. judging a text layer).
struct ScopeError : Error {
    using Error::Error;
};

// Non-finite values or numerically unusable parameters.
struct NumericError : Error {
    using Error::Error;
};

// A graph node whose operation is outside the closed differentiable op set.
struct UnsupportedOperationError : Error {
    using Error::Error;
};

struct EmptyInputError : Error {
    using Error::Error;
};

// External service (judge endpoint) did not deliver complete results.
struct IncompleteServiceError : Error {
    using Error::Error;
};

}  // namespace layergen
