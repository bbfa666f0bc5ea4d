#pragma once

#include <stdexcept>
#include <string>

namespace cadet {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file header, wrong magic, truncated payload.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Data violates a domain invariant (non-finite entries, ragged rows).
class ValidationError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Zero-norm vector where a direction is required.
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class InsufficientSamplesError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Calibration cannot produce a finite gamma (zero out-similarity variance).
class DegenerateCalibrationError : public Error {
public:
    using Error::Error;
};

class TrainingFailure : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace cadet
