#pragma once

#include <stdexcept>
#include <string>

namespace miniwfl {

// Every failure raised by the engine carries one of these codes so callers
// can map it to diagnostics, failure classes and CLI exit codes.
enum class ErrorCode {
  SyntaxError,
  SchemaError,
  TypeSyntaxError,
  NotFound,
  IncludeCycle,
  ExprSyntaxError,
  UnknownReference,
  TypeError,
  PlanError,
  JobOrderError,
  ScatterLengthMismatch,
  StagingError,
  LaunchError,
  Timeout,
  OutputMissing,
  OutputAmbiguous,
  CacheIOError,
  IOError,
  DowngradeError,
  UnknownVersion,
  CycleDetected,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Expression syntax errors report the 0-based column inside the source text.
class ExprSyntaxError : public Error {
 public:
  ExprSyntaxError(std::size_t column, const std::string& message)
      : Error(ErrorCode::ExprSyntaxError,
              message + " at column " + std::to_string(column)),
        column_(column) {}

  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t column_;
};

}  // namespace miniwfl
