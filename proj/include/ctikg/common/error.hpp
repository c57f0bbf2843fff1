#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ctikg {

/// Error categories shared by every module. The CLI maps these onto exit codes.
enum class Errc {
  invalid_argument,   // caller passed something that violates a precondition
  shape_mismatch,
  empty_input,
  context_overflow,
  out_of_range,
  non_finite,
  io,
  format,             // unrecognised container or malformed record
  version,
  truncated,
  syntax,
  semantic,
  insufficient_input,
  containment,        // attempt to publish generated text outside the sandbox
  runtime,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Parse errors carry the byte offset into the query text.
class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t position, const std::string& message);

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

[[noreturn]] void fail(Errc code, const std::string& message);

}  // namespace ctikg
