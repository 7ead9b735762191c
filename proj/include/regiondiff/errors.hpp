#pragma once

#include <stdexcept>
#include <string>

namespace regiondiff {

// Base for every error raised by the library. Subclasses name the failure
// category so callers (CLI, service) can map them onto exit codes / HTTP codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParameterError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class EmptyMaskError : public Error {
public:
    using Error::Error;
};

class ConditioningError : public Error {
public:
    using Error::Error;
};

class BackendError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class AggregationError : public Error {
public:
    using Error::Error;
};

class CommandError : public Error {
public:
    using Error::Error;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

class SceneError : public Error {
public:
    using Error::Error;
};

class MigrationError : public SceneError {
public:
    using SceneError::SceneError;
};

class ImageError : public Error {
public:
    using Error::Error;
};

}  // namespace regiondiff
