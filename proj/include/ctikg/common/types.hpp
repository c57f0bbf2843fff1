#pragma once

#include <cstdint>
#include <vector>

namespace ctikg {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

}  // namespace ctikg
