#pragma once

#include <stdexcept>
#include <string>

namespace oods {

// Error buckets map onto CLI exit codes: ConfigError -> 2, DataError -> 3,
// NumericError -> 4.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// numerics
struct NotSPD : NumericError {
    using NumericError::NumericError;
};
struct DimensionMismatch : NumericError {
    using NumericError::NumericError;
};
struct DegenerateData : DataError {
    using DataError::DataError;
};
struct NonFiniteValue : NumericError {
    using NumericError::NumericError;
};

// dataset
struct ParseError : DataError {
    using DataError::DataError;
};
struct MixedLabeling : DataError {
    using DataError::DataError;
};
struct EmptyVocab : DataError {
    using DataError::DataError;
};
struct InvalidConfig : ConfigError {
    using ConfigError::ConfigError;
};
struct TooFewSamples : DataError {
    using DataError::DataError;
};

// model
struct TokenOutOfRange : DataError {
    using DataError::DataError;
};

// training
struct OODInTraining : DataError {
    using DataError::DataError;
};
struct Diverged : NumericError {
    using NumericError::NumericError;
};
struct NonFiniteGradient : NumericError {
    using NumericError::NumericError;
};
struct VersionMismatch : DataError {
    using DataError::DataError;
};
struct CorruptFile : DataError {
    using DataError::DataError;
};
struct IoError : DataError {
    using DataError::DataError;
};

// scoring
struct FitFailed : NumericError {
    using NumericError::NumericError;
};
struct ClassTooSmall : DataError {
    using DataError::DataError;
};
struct MissingStats : ConfigError {
    using ConfigError::ConfigError;
};

// evaluation
struct OneClassOnly : DataError {
    using DataError::DataError;
};
struct UnlabeledData : DataError {
    using DataError::DataError;
};
struct MixedDetectors : DataError {
    using DataError::DataError;
};

}  // namespace oods
