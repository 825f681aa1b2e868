#pragma once

#include <stdexcept>
#include <string>

namespace triage {

/// Root of the project's exception hierarchy. The CLI maps the concrete
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or unusable input data (missing files, malformed CSV, empty classes).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or violated precondition of an API call.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or could not proceed.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Model file could not be read or failed verification.
class ModelFormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace triage
