#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace curvmon {

enum class ErrorCode {
  ShapeMismatch,
  InvalidArgument,
  InvalidState,
  NonFinite,
  CapExceeded,
  GridMismatch,
  NotBracketed,
  Io,
  Parse,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Structured failure raised by every module. `what()` carries the code name
/// followed by the detail message so a CLI can print it verbatim.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace curvmon
