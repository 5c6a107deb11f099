#include "curvmon/error.hpp"

namespace curvmon {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::InvalidState: return "invalid-state";
    case ErrorCode::NonFinite: return "non-finite";
    case ErrorCode::CapExceeded: return "cap-exceeded";
    case ErrorCode::GridMismatch: return "grid-mismatch";
    case ErrorCode::NotBracketed: return "not-bracketed";
    case ErrorCode::Io: return "io";
    case ErrorCode::Parse: return "parse";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code),
      detail_(message) {}

}  // namespace curvmon
