#pragma once

#include <string>
#include <string_view>

namespace ctikg::extraction {

/// Lowercases and replaces every run of characters outside [a-z0-9] with a
/// single underscore, trimming underscores at both ends:
/// "  SolarWinds-hack " -> "solarwinds_hack". Errc::invalid_argument when
/// nothing remains.
std::string canonicalize(std::string_view surface);

}  // namespace ctikg::extraction
