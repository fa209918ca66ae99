#pragma once

#include <stdexcept>

namespace vtar {

/// Base class for every error thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor shape or dimension mismatch.
struct ShapeError : Error {
    using Error::Error;
};

/// Argument outside its valid domain (non-positive temperature, empty
/// label set, empty frame window, ...).
struct DomainError : Error {
    using Error::Error;
};

/// Out-of-range index (class targets, token ids, frame indices).
struct IndexError : Error {
    using Error::Error;
};

/// Malformed on-disk artifact (clip file, checkpoint, manifest).
struct FormatError : Error {
    using Error::Error;
};

/// Dataset-level problem (label missing from a prompt set, duplicate
/// prompts in a contrastive batch).
struct DataError : Error {
    using Error::Error;
};

/// Invalid generator / merge / ablation specification.
struct SpecError : Error {
    using Error::Error;
};

/// Non-finite loss or parameter encountered during training.
struct NumericError : Error {
    using Error::Error;
};

/// Activity window exceeding the sampler's duration cap.
struct WindowError : DomainError {
    using DomainError::DomainError;
};

}  // namespace vtar
