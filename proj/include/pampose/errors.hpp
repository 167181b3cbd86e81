#pragma once

#include <stdexcept>
#include <string>

namespace pampose {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shapes or channel counts do not line up; message names both shapes.
struct DimensionError : Error {
    using Error::Error;
};

// Empty or missing input where the operation requires data.
struct InputError : Error {
    using Error::Error;
};

// A caller-side precondition was violated (non-scalar loss, bad confidence, ...).
struct ContractError : Error {
    using Error::Error;
};

// Degenerate geometry: near-zero quaternion, rank-deficient point set,
// or a scene occluded down to too few points.
struct DegenerateError : Error {
    using Error::Error;
};

// Forward op produced a non-finite value (training divergence).
struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Checkpoint or report with an unknown magic/schema version.
struct VersionError : Error {
    using Error::Error;
};

// Config file / CLI flag validation failure.
struct ValidationError : Error {
    using Error::Error;
};

}  // namespace pampose
