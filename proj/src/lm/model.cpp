#include "ctikg/lm/model.hpp"

#include <cmath>

#include "ctikg/common/error.hpp"
#include "kernels.hpp"

namespace ctikg::lm {

namespace {

template <typename T>
Tensor<T> vec(std::int64_t n, T fill = T(0)) {
  return Tensor<T>({static_cast<std::uint32_t>(n)}, fill);
}

template <typename T>
Tensor<T> mat(std::int64_t r, std::int64_t c) {
  return Tensor<T>::matrix(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
}

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev) {
  for (auto& v : t.data) v = static_cast<T>(rng.normal() * stddev);
}

template <typename Params, typename Out>
void collect(Params& p, Out& out) {
  out.emplace_back("token_embedding", &p.token_embedding);
  out.emplace_back("positional_embedding", &p.positional_embedding);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string prefix = "layers." + std::to_string(i) + ".";
    out.emplace_back(prefix + "norm1.gain", &l.norm1_gain);
    out.emplace_back(prefix + "norm1.bias", &l.norm1_bias);
    out.emplace_back(prefix + "qkv.weight", &l.qkv_weight);
    out.emplace_back(prefix + "qkv.bias", &l.qkv_bias);
    out.emplace_back(prefix + "proj.weight", &l.proj_weight);
    out.emplace_back(prefix + "proj.bias", &l.proj_bias);
    out.emplace_back(prefix + "norm2.gain", &l.norm2_gain);
    out.emplace_back(prefix + "norm2.bias", &l.norm2_bias);
    out.emplace_back(prefix + "ffn_in.weight", &l.ffn_in_weight);
    out.emplace_back(prefix + "ffn_in.bias", &l.ffn_in_bias);
    out.emplace_back(prefix + "ffn_out.weight", &l.ffn_out_weight);
    out.emplace_back(prefix + "ffn_out.bias", &l.ffn_out_bias);
  }
  out.emplace_back("final_norm.gain", &p.final_gain);
  out.emplace_back("final_norm.bias", &p.final_bias);
}

}  // namespace

template <typename T>
LmParams<T> LmParams<T>::zeros(const LmConfig& c) {
  c.validate();
  LmParams<T> p;
  p.config = c;
  const auto d = c.d_model;
  p.token_embedding = mat<T>(c.vocab_size, d);
  p.positional_embedding = mat<T>(c.context_length, d);
  p.layers.resize(static_cast<std::size_t>(c.n_layers));
  for (auto& l : p.layers) {
    l.norm1_gain = vec<T>(d);
    l.norm1_bias = vec<T>(d);
    l.qkv_weight = mat<T>(d, 3 * d);
    l.qkv_bias = vec<T>(3 * d);
    l.proj_weight = mat<T>(d, d);
    l.proj_bias = vec<T>(d);
    l.norm2_gain = vec<T>(d);
    l.norm2_bias = vec<T>(d);
    l.ffn_in_weight = mat<T>(d, c.d_ff);
    l.ffn_in_bias = vec<T>(c.d_ff);
    l.ffn_out_weight = mat<T>(c.d_ff, d);
    l.ffn_out_bias = vec<T>(d);
  }
  p.final_gain = vec<T>(d);
  p.final_bias = vec<T>(d);
  return p;
}

template <typename T>
LmParams<T> LmParams<T>::initialized(const LmConfig& c, Rng& rng) {
  auto p = zeros(c);
  const double residual_std = 0.02 / std::sqrt(2.0 * static_cast<double>(c.n_layers));
  fill_normal(p.token_embedding, rng, 0.02);
  fill_normal(p.positional_embedding, rng, 0.01);
  for (auto& l : p.layers) {
    std::fill(l.norm1_gain.data.begin(), l.norm1_gain.data.end(), T(1));
    std::fill(l.norm2_gain.data.begin(), l.norm2_gain.data.end(), T(1));
    fill_normal(l.qkv_weight, rng, 0.02);
    fill_normal(l.proj_weight, rng, residual_std);
    fill_normal(l.ffn_in_weight, rng, 0.02);
    fill_normal(l.ffn_out_weight, rng, residual_std);
  }
  std::fill(p.final_gain.data.begin(), p.final_gain.data.end(), T(1));
  return p;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> LmParams<T>::named_tensors() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  collect(*this, out);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> LmParams<T>::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  collect(*this, out);
  return out;
}

template <typename T>
std::size_t LmParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_tensors()) n += t->size();
  return n;
}

template <typename T>
Decoder<T>::Decoder(const LmParams<T>& params) : params_(&params) {
  const auto& c = params.config;
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ctx = static_cast<std::size_t>(c.context_length);
  keys_.assign(static_cast<std::size_t>(c.n_layers), std::vector<T>(ctx * d));
  values_.assign(static_cast<std::size_t>(c.n_layers), std::vector<T>(ctx * d));
  x_.resize(d);
  norm_.resize(d);
  qkv_.resize(3 * d);
  attn_.resize(d);
  tmp_.resize(d);
  hidden_.resize(static_cast<std::size_t>(c.d_ff));
  probs_.resize(ctx);
  logits_.resize(static_cast<std::size_t>(c.vocab_size));
}

template <typename T>
std::size_t Decoder<T>::capacity() const {
  return static_cast<std::size_t>(params_->config.context_length);
}

template <typename T>
std::span<const T> Decoder<T>::push(TokenId token) {
  const auto& p = *params_;
  const auto& c = p.config;
  if (token < 0 || token >= c.vocab_size) {
    fail(Errc::out_of_range, "token id " + std::to_string(token) + " outside vocabulary of " +
                                 std::to_string(c.vocab_size));
  }
  if (length_ >= capacity()) {
    fail(Errc::context_overflow, "sequence exceeds context length " + std::to_string(capacity()));
  }
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.d_ff);
  const auto hd = static_cast<std::size_t>(c.head_dim());
  const std::size_t t = length_;

  const auto emb = p.token_embedding.row(static_cast<std::size_t>(token));
  const auto pos = p.positional_embedding.row(t);
  for (std::size_t i = 0; i < d; ++i) x_[i] = emb[i] + pos[i];

  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const auto& l = p.layers[li];
    kernels::layer_norm_row(norm_.data(), static_cast<T*>(nullptr), static_cast<T*>(nullptr),
                            x_.data(), l.norm1_gain.data.data(), l.norm1_bias.data.data(), d);
    kernels::linear(qkv_.data(), norm_.data(), l.qkv_weight.data.data(), l.qkv_bias.data.data(),
                    1, d, 3 * d);
    T* kc = keys_[li].data();
    T* vc = values_[li].data();
    std::copy(qkv_.begin() + static_cast<std::ptrdiff_t>(d),
              qkv_.begin() + static_cast<std::ptrdiff_t>(2 * d), kc + t * d);
    std::copy(qkv_.begin() + static_cast<std::ptrdiff_t>(2 * d), qkv_.end(), vc + t * d);
    for (std::size_t h = 0; h < static_cast<std::size_t>(c.n_heads); ++h) {
      kernels::attend_row(attn_.data() + h * hd, probs_.data(), qkv_.data() + h * hd,
                          kc + h * hd, vc + h * hd, d, t, hd);
    }
    kernels::linear(tmp_.data(), attn_.data(), l.proj_weight.data.data(), l.proj_bias.data.data(),
                    1, d, d);
    for (std::size_t i = 0; i < d; ++i) x_[i] += tmp_[i];

    kernels::layer_norm_row(norm_.data(), static_cast<T*>(nullptr), static_cast<T*>(nullptr),
                            x_.data(), l.norm2_gain.data.data(), l.norm2_bias.data.data(), d);
    kernels::linear(hidden_.data(), norm_.data(), l.ffn_in_weight.data.data(),
                    l.ffn_in_bias.data.data(), 1, d, ff);
    for (auto& h : hidden_) h = gelu(h);
    kernels::linear(tmp_.data(), hidden_.data(), l.ffn_out_weight.data.data(),
                    l.ffn_out_bias.data.data(), 1, ff, d);
    for (std::size_t i = 0; i < d; ++i) x_[i] += tmp_[i];
  }
  kernels::layer_norm_row(norm_.data(), static_cast<T*>(nullptr), static_cast<T*>(nullptr),
                          x_.data(), p.final_gain.data.data(), p.final_bias.data.data(), d);
  for (std::size_t v = 0; v < logits_.size(); ++v) {
    const T* e = p.token_embedding.data.data() + v * d;
    logits_[v] = kernels::dot(norm_.data(), e, d);
  }
  ++length_;
  return logits_;
}

template <typename T>
Tensor<T> forward(const LmParams<T>& params, std::span<const TokenId> ids) {
  if (ids.empty()) fail(Errc::empty_input, "forward on an empty sequence");
  if (ids.size() > static_cast<std::size_t>(params.config.context_length)) {
    fail(Errc::context_overflow, std::to_string(ids.size()) + " tokens exceed context length " +
                                     std::to_string(params.config.context_length));
  }
  Decoder<T> decoder(params);
  auto logits = Tensor<T>::matrix(ids.size(), static_cast<std::size_t>(params.config.vocab_size));
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const auto row = decoder.push(ids[t]);
    std::copy(row.begin(), row.end(), logits.row(t).begin());
  }
  return logits;
}

template <typename T>
Tensor<T> multi_head_attention(const LmConfig& c, const LayerParams<T>& l, const Tensor<T>& x) {
  const std::size_t n = x.rows();
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto hd = static_cast<std::size_t>(c.head_dim());
  if (n == 0) fail(Errc::empty_input, "attention over an empty sequence");
  if (n > static_cast<std::size_t>(c.context_length)) {
    fail(Errc::context_overflow, std::to_string(n) + " positions exceed context length " +
                                     std::to_string(c.context_length));
  }
  if (x.cols() != d) fail(Errc::shape_mismatch, "input width differs from d_model");
  std::vector<T> qkv(n * 3 * d);
  kernels::linear(qkv.data(), x.data.data(), l.qkv_weight.data.data(), l.qkv_bias.data.data(), n,
                  d, 3 * d);
  std::vector<T> concat(n * d);
  std::vector<T> probs(n);
  for (std::size_t h = 0; h < static_cast<std::size_t>(c.n_heads); ++h) {
    for (std::size_t t = 0; t < n; ++t) {
      kernels::attend_row(concat.data() + t * d + h * hd, probs.data(),
                          qkv.data() + t * 3 * d + h * hd, qkv.data() + d + h * hd,
                          qkv.data() + 2 * d + h * hd, 3 * d, t, hd);
    }
  }
  auto out = Tensor<T>::matrix(n, d);
  kernels::linear(out.data.data(), concat.data(), l.proj_weight.data.data(),
                  l.proj_bias.data.data(), n, d, d);
  return out;
}

template struct LmParams<float>;
template struct LmParams<double>;
template class Decoder<float>;
template class Decoder<double>;
template Tensor<float> forward(const LmParams<float>&, std::span<const TokenId>);
template Tensor<double> forward(const LmParams<double>&, std::span<const TokenId>);
template Tensor<float> multi_head_attention(const LmConfig&, const LayerParams<float>&,
                                            const Tensor<float>&);
template Tensor<double> multi_head_attention(const LmConfig&, const LayerParams<double>&,
                                             const Tensor<double>&);

}  // namespace ctikg::lm
