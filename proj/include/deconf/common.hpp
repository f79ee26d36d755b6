#pragma once

#include <stdexcept>
#include <string>

namespace deconf {

inline constexpr const char* kVersion = "0.1.0";

// Error categories map onto CLI exit codes:
//   validation/config -> 1, io -> 2, numeric -> 3.
enum class ErrorKind { validation, config, io, numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& msg)
      : Error(ErrorKind::validation, "dimension error: " + msg) {}
};

struct ParameterError : Error {
  explicit ParameterError(const std::string& msg)
      : Error(ErrorKind::validation, "parameter error: " + msg) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& msg)
      : Error(ErrorKind::validation, "validation error: " + msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg)
      : Error(ErrorKind::config, "config error: " + msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg)
      : Error(ErrorKind::io, "io error: " + msg) {}
};

struct TrainingError : Error {
  explicit TrainingError(const std::string& msg)
      : Error(ErrorKind::numeric, "training error: " + msg) {}
};

struct EvaluationError : Error {
  explicit EvaluationError(const std::string& msg)
      : Error(ErrorKind::numeric, "evaluation error: " + msg) {}
};

}  // namespace deconf
