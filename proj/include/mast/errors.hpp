#pragma once

#include <stdexcept>
#include <string>

namespace mast {

// Every error raised by the library derives from std::runtime_error so the CLI
// can map each family onto its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DegenerateRotation : public Error {
 public:
  using Error::Error;
};

class NonPositiveDepth : public Error {
 public:
  using Error::Error;
};

class DegenerateFeature : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DependencyError : public Error {
 public:
  using Error::Error;
};

class IncompatibleCheckpoint : public Error {
 public:
  using Error::Error;
};

class TrainingFailure : public Error {
 public:
  using Error::Error;
};

// Raised when evaluation-only ground truth is read while a training scope is open.
class AuditViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace mast
