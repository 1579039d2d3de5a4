#pragma once

#include <stdexcept>
#include <string>

namespace gradfeat {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Bad user-supplied values (labels out of range, empty datasets, ...).
class InputError : public Error {
public:
    using Error::Error;
};

// Operation invoked in the wrong state, e.g. backward on an empty tape.
class StateError : public Error {
public:
    using Error::Error;
};

// Network definition that fails validation.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Malformed file contents; the message names the byte offset.
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Loss became non-finite during optimization.
class TrainingError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace gradfeat
