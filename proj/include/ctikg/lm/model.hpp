#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctikg/common/rng.hpp"
#include "ctikg/common/types.hpp"
#include "ctikg/lm/config.hpp"
#include "ctikg/lm/tensor.hpp"

namespace ctikg::lm {

template <typename T>
struct LayerParams {
  Tensor<T> norm1_gain, norm1_bias;
  Tensor<T> qkv_weight, qkv_bias;    // [d_model x 3 d_model], [3 d_model]
  Tensor<T> proj_weight, proj_bias;  // [d_model x d_model], [d_model]
  Tensor<T> norm2_gain, norm2_bias;
  Tensor<T> ffn_in_weight, ffn_in_bias;    // [d_model x d_ff], [d_ff]
  Tensor<T> ffn_out_weight, ffn_out_bias;  // [d_ff x d_model], [d_model]

  bool operator==(const LayerParams&) const = default;
};

/// Transformer weights. The output head is tied to token_embedding.
template <typename T>
struct LmParams {
  LmConfig config;
  Tensor<T> token_embedding;       // [vocab x d_model]
  Tensor<T> positional_embedding;  // [context x d_model]
  std::vector<LayerParams<T>> layers;
  Tensor<T> final_gain, final_bias;

  /// Zero-filled parameters with the shapes implied by `config`.
  static LmParams zeros(const LmConfig& config);
  /// GPT-2 style initialisation drawn from `rng`.
  static LmParams initialized(const LmConfig& config, Rng& rng);

  /// Every tensor with its stable name, in checkpoint order.
  std::vector<std::pair<std::string, Tensor<T>*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor<T>*>> named_tensors() const;

  std::size_t parameter_count() const;

  bool operator==(const LmParams&) const = default;
};

template <typename To, typename From>
LmParams<To> cast_params(const LmParams<From>& p) {
  auto out = LmParams<To>::zeros(p.config);
  auto src = p.named_tensors();
  auto dst = out.named_tensors();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto& s = src[i].second->data;
    auto& d = dst[i].second->data;
    for (std::size_t j = 0; j < s.size(); ++j) d[j] = static_cast<To>(s[j]);
  }
  return out;
}

/// Incremental causal decoding with a key/value cache. Feeding tokens one by
/// one yields the same logits, bit for bit, as `forward` over the prefix.
template <typename T>
class Decoder {
 public:
  explicit Decoder(const LmParams<T>& params);

  /// Appends one token and returns the next-token logits at its position.
  std::span<const T> push(TokenId token);
  void reset() { length_ = 0; }
  std::size_t length() const { return length_; }
  std::size_t capacity() const;

 private:
  const LmParams<T>* params_;
  std::size_t length_ = 0;
  std::vector<std::vector<T>> keys_, values_;  // per layer, [context x d_model]
  std::vector<T> x_, norm_, qkv_, attn_, tmp_, hidden_, probs_, logits_;
};

/// Logits [T x vocab] for a token sequence (dropout never applies here).
template <typename T>
Tensor<T> forward(const LmParams<T>& params, std::span<const TokenId> ids);

/// Causal multi-head self-attention of one layer applied to x [T x d_model]:
/// QKV projection, per-head masked attention, concatenation, output projection.
template <typename T>
Tensor<T> multi_head_attention(const LmConfig& config, const LayerParams<T>& layer,
                               const Tensor<T>& x);

}  // namespace ctikg::lm
