#include "ifprobe/error.hpp"

namespace ifprobe {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kSchema: return "schema";
    case ErrorKind::kDuplicate: return "duplicate";
    case ErrorKind::kPrecondition: return "precondition";
    case ErrorKind::kDimensionMismatch: return "dimension_mismatch";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kUnregisteredType: return "unregistered_type";
    case ErrorKind::kTransport: return "transport";
    case ErrorKind::kTimeout: return "timeout";
    case ErrorKind::kProtocol: return "protocol";
    case ErrorKind::kInvariant: return "invariant";
  }
  return "unknown";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kTransport:
    case ErrorKind::kTimeout:
    case ErrorKind::kProtocol:
      return 3;
    case ErrorKind::kInvariant:
      return 4;
    default:
      return 2;
  }
}

}  // namespace ifprobe
