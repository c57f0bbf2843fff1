#include "ctikg/extraction/canonical.hpp"

#include "ctikg/common/error.hpp"

namespace ctikg::extraction {

std::string canonicalize(std::string_view surface) {
  std::string out;
  bool pending_sep = false;
  for (char raw : surface) {
    char c = raw;
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    const bool keep = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
    if (!keep) {
      pending_sep = true;
      continue;
    }
    if (pending_sep && !out.empty()) out += '_';
    pending_sep = false;
    out += c;
  }
  if (out.empty()) {
    fail(Errc::invalid_argument, "'" + std::string(surface) + "' has no identifier characters");
  }
  return out;
}

}  // namespace ctikg::extraction
