#include "ctikg/lm/config.hpp"

#include "ctikg/common/error.hpp"

namespace ctikg::lm {

void LmConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) fail(Errc::invalid_argument, "LmConfig: " + what);
  };
  require(vocab_size >= 2, "vocab_size must be >= 2");
  require(context_length >= 1, "context_length must be >= 1");
  require(n_layers >= 1, "n_layers must be >= 1");
  require(d_model >= 1 && n_heads >= 1, "d_model and n_heads must be positive");
  require(d_model % n_heads == 0, "d_model " + std::to_string(d_model) +
                                      " is not divisible by n_heads " + std::to_string(n_heads));
  require(d_ff == 4 * d_model, "d_ff must equal 4 * d_model");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
}

LmConfig LmConfig::desk(std::int64_t vocab_size) {
  LmConfig c;
  c.vocab_size = vocab_size;
  return c;
}

LmConfig LmConfig::paper_117m(std::int64_t vocab_size) {
  LmConfig c;
  c.vocab_size = vocab_size;
  c.context_length = 128;
  c.n_layers = 12;
  c.d_model = 768;
  c.n_heads = 12;
  c.d_ff = 4 * 768;
  return c;
}

LmConfig LmConfig::tiny(std::int64_t vocab_size) {
  LmConfig c;
  c.vocab_size = vocab_size;
  c.context_length = 64;
  c.n_layers = 1;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 64;
  c.dropout = 0.0;
  return c;
}

LmConfig LmConfig::preset(std::string_view name, std::int64_t vocab_size) {
  if (name == "desk") return desk(vocab_size);
  if (name == "paper-117M") return paper_117m(vocab_size);
  if (name == "tiny") return tiny(vocab_size);
  fail(Errc::invalid_argument, "unknown model preset '" + std::string(name) + "'");
}

nlohmann::json to_json(const LmConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"context_length", c.context_length},
          {"n_layers", c.n_layers},     {"d_model", c.d_model},
          {"n_heads", c.n_heads},       {"d_ff", c.d_ff},
          {"dropout", c.dropout},       {"seed", c.seed}};
}

LmConfig config_from_json(const nlohmann::json& j) {
  try {
    LmConfig c;
    c.vocab_size = j.at("vocab_size").get<std::int64_t>();
    c.context_length = j.at("context_length").get<std::int64_t>();
    c.n_layers = j.at("n_layers").get<std::int64_t>();
    c.d_model = j.at("d_model").get<std::int64_t>();
    c.n_heads = j.at("n_heads").get<std::int64_t>();
    c.d_ff = j.at("d_ff").get<std::int64_t>();
    c.dropout = j.at("dropout").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, std::string("bad model config: ") + e.what());
  }
}

}  // namespace ctikg::lm
