#pragma once

#include <stdexcept>
#include <string>

namespace qpkpd {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input file/table problems -------------------------------------------------

// Header is missing a required column, or the layout is unusable.
struct SchemaError : Error {
    using Error::Error;
};

// A cell (or config value) could not be converted; message carries row/column.
struct ParseError : Error {
    using Error::Error;
};

// Structurally valid input that violates a semantic rule (bad EVID/MDV combo,
// conflicting covariates, observation without any dose, ...).
struct ValidationError : Error {
    using Error::Error;
};

// Input file exists but contains nothing to parse.
struct EmptyInputError : Error {
    using Error::Error;
};

// Numerics ------------------------------------------------------------------

// Argument outside its mathematical domain (negative rate, sigma <= 0, ...).
struct DomainError : Error {
    using Error::Error;
};

// Query outside the covered range (interpolation time, dose outside grid).
struct RangeError : Error {
    using Error::Error;
};

// The integrator gave up: state diverged or step size underflowed.
// `last_time` is the last successfully accepted solution time.
struct SolverError : Error {
    double last_time;
    explicit SolverError(const std::string& what, double t = 0.0)
        : Error(what), last_time(t) {}
};

// A likelihood evaluation degenerated (prediction collapsed to ~0, all
// importance weights vanished, ...).
struct DegeneracyError : Error {
    using Error::Error;
};

// Population fit could not proceed (too many solver failures in an
// iteration, inconsistent settings discovered mid-run, ...).
struct EstimationError : Error {
    using Error::Error;
};

// Amount does not fit the occupation-number encoding.
struct TruncationError : Error {
    using Error::Error;
};

// Config file unreadable or inconsistent.
struct ConfigError : Error {
    using Error::Error;
};

} // namespace qpkpd
