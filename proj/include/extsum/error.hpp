#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace extsum {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data violates a documented contract (label length, unlabeled document, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// A document with no usable sentence after encoding.
class DegenerateDocumentError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ContextLengthError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Malformed input record; carries the 1-based line number.
class ParseError : public ValidationError {
public:
    ParseError(std::size_t line, const std::string& what)
        : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Record parses but breaks a cross-field rule; carries the 1-based line number.
class RecordValidationError : public ValidationError {
public:
    RecordValidationError(std::size_t line, const std::string& what)
        : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Non-finite loss during training.
class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Checkpoint load failures. Each is an IoError so callers that only care
// about "could not read" can catch the base.
class FormatError : public IoError {
public:
    using IoError::IoError;
};

class VersionError : public IoError {
public:
    using IoError::IoError;
};

class TruncatedError : public IoError {
public:
    using IoError::IoError;
};

}  // namespace extsum
