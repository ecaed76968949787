#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ifprobe {

enum class ErrorKind {
  kParse,
  kSchema,
  kDuplicate,
  kPrecondition,
  kDimensionMismatch,
  kIo,
  kValidation,
  kUnregisteredType,
  kTransport,
  kTimeout,
  kProtocol,
  kInvariant,
};

std::string_view to_string(ErrorKind kind);

/// Base exception for every failure raised by the library. The kind decides
/// the CLI exit code (see exit_code_for).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Exit codes: 0 success, 2 config/input error, 3 backend or transport
/// error, 4 internal invariant violation.
int exit_code_for(ErrorKind kind);

}  // namespace ifprobe
