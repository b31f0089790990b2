#pragma once

#include <stdexcept>
#include <string>

namespace engram {

// Error taxonomy used across the library. The CLI maps these onto process
// exit codes: usage/config -> 2, input/io/format -> 3, invariant/state -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad command line or semantically invalid configuration.
struct UsageError : Error {
    using Error::Error;
};

// Caller handed us data that violates a precondition (out-of-range token id,
// duplicate keys, n_hot < 1, ...).
struct InputError : Error {
    using Error::Error;
};

// Filesystem-level failure: missing file, short read, unwritable path.
struct IoError : Error {
    using Error::Error;
};

// A file exists but its bytes are not what the format says they should be
// (bad magic, unsupported version, truncated payload).
struct FormatError : Error {
    using Error::Error;
};

// A structural guarantee the artifact promises was violated at runtime
// (iso-parameter mismatch, MPHF residual overflow, non-finite loss).
struct InvariantError : Error {
    using Error::Error;
};

// Operation called on an object in the wrong state (query on an empty MPHF,
// backward without a forward cache).
struct StateError : Error {
    using Error::Error;
};

// Evaluation could not produce a defined result (no labeled positions).
struct EvaluationError : Error {
    using Error::Error;
};

}  // namespace engram
