#pragma once

#include <stdexcept>
#include <string>

namespace ultrastage {

enum class ErrorKind {
  Format,
  Truncated,
  Io,
  Invariant,
  Shape,
  Config,
  Solver,
  Range,
  NotFound,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Format: return "FormatError";
    case ErrorKind::Truncated: return "TruncatedError";
    case ErrorKind::Io: return "IoError";
    case ErrorKind::Invariant: return "InvariantError";
    case ErrorKind::Shape: return "ShapeError";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::Solver: return "SolverError";
    case ErrorKind::Range: return "RangeError";
    case ErrorKind::NotFound: return "NotFoundError";
  }
  return "Error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <ErrorKind K>
class TypedError : public Error {
 public:
  explicit TypedError(const std::string& what) : Error(K, what) {}
};

using FormatError = TypedError<ErrorKind::Format>;
using TruncatedError = TypedError<ErrorKind::Truncated>;
using IoError = TypedError<ErrorKind::Io>;
using InvariantError = TypedError<ErrorKind::Invariant>;
using ShapeError = TypedError<ErrorKind::Shape>;
using ConfigError = TypedError<ErrorKind::Config>;
using SolverError = TypedError<ErrorKind::Solver>;
using RangeError = TypedError<ErrorKind::Range>;
using NotFoundError = TypedError<ErrorKind::NotFound>;

// Raised by multi-stage pipelines; keeps the failing stage's kind so callers
// can still map it to an exit code.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.kind(), stage + ": " + cause.what()),
        stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace ultrastage
