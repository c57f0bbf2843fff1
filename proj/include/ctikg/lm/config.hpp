#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

namespace ctikg::lm {

/// Shape of a decoder-only transformer.
struct LmConfig {
  std::int64_t vocab_size = 4096;
  std::int64_t context_length = 128;
  std::int64_t n_layers = 4;
  std::int64_t d_model = 128;
  std::int64_t n_heads = 4;
  std::int64_t d_ff = 512;
  double dropout = 0.1;
  std::uint64_t seed = 0;

  std::int64_t head_dim() const { return d_model / n_heads; }

  /// Throws Errc::invalid_argument when an invariant does not hold.
  void validate() const;

  bool operator==(const LmConfig&) const = default;

  /// 4 layers, width 128, 4 heads, context 128.
  static LmConfig desk(std::int64_t vocab_size = 4096);
  /// 12 layers, width 768, 12 heads, context 128 (block size used for the fine-tune).
  static LmConfig paper_117m(std::int64_t vocab_size = 50257);
  /// A very small model for fast checks.
  static LmConfig tiny(std::int64_t vocab_size);
  static LmConfig preset(std::string_view name, std::int64_t vocab_size);
};

nlohmann::json to_json(const LmConfig& config);
LmConfig config_from_json(const nlohmann::json& j);

}  // namespace ctikg::lm
