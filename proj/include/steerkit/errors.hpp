#pragma once

#include <stdexcept>
#include <string>

namespace steerkit {

// Error taxonomy. Each condition named by the contracts gets its own type so
// callers (and tests) can tell them apart.

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LengthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NormalizationError : NumericError {
    using NumericError::NumericError;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CapacityError : DataError {
    using DataError::DataError;
};

struct LookupError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CapabilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RankError : NumericError {
    using NumericError::NumericError;
};

struct MeanError : NumericError {
    using NumericError::NumericError;
};

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ArgumentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint archive failures, one type per distinct condition.
struct ArchiveError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BadMagicError : ArchiveError {
    using ArchiveError::ArchiveError;
};
struct BadVersionError : ArchiveError {
    using ArchiveError::ArchiveError;
};
struct ChecksumError : ArchiveError {
    using ArchiveError::ArchiveError;
};

}  // namespace steerkit
