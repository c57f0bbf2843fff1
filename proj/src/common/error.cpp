#include "ctikg/common/error.hpp"

namespace ctikg {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::empty_input: return "empty_input";
    case Errc::context_overflow: return "context_overflow";
    case Errc::out_of_range: return "out_of_range";
    case Errc::non_finite: return "non_finite";
    case Errc::io: return "io";
    case Errc::format: return "format";
    case Errc::version: return "version";
    case Errc::truncated: return "truncated";
    case Errc::syntax: return "syntax";
    case Errc::semantic: return "semantic";
    case Errc::insufficient_input: return "insufficient_input";
    case Errc::containment: return "containment";
    case Errc::runtime: return "runtime";
  }
  return "unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

SyntaxError::SyntaxError(std::size_t position, const std::string& message)
    : Error(Errc::syntax, message + " (at offset " + std::to_string(position) + ")"),
      position_(position) {}

void fail(Errc code, const std::string& message) { throw Error(code, message); }

}  // namespace ctikg
