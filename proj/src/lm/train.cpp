#include "ctikg/lm/train.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ctikg/common/error.hpp"
#include "kernels.hpp"

namespace ctikg::lm {

namespace {

void validate_batch(const LmConfig& c, Batch batch) {
  if (batch.empty()) fail(Errc::empty_input, "empty batch");
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& seq = batch[b];
    if (seq.size() < 2) {
      fail(Errc::invalid_argument, "batch item " + std::to_string(b) + " has " +
                                       std::to_string(seq.size()) +
                                       " tokens; next-token training needs at least 2");
    }
    if (seq.size() - 1 > static_cast<std::size_t>(c.context_length)) {
      fail(Errc::context_overflow, "batch item " + std::to_string(b) + " has " +
                                       std::to_string(seq.size() - 1) +
                                       " inputs, context length is " +
                                       std::to_string(c.context_length));
    }
    for (TokenId id : seq) {
      if (id < 0 || id >= c.vocab_size) {
        fail(Errc::out_of_range, "token id " + std::to_string(id) + " outside vocabulary");
      }
    }
  }
}

// Activations of one layer for one sequence.
template <typename T>
struct LayerCache {
  std::vector<T> x_in, norm1, mean1, rstd1, qkv, probs, attn, drop_attn, x_mid;
  std::vector<T> norm2, mean2, rstd2, hidden, act, drop_ffn;
};

// Forward activations and backward scratch for one sequence at a time.
template <typename T>
class Workspace {
 public:
  explicit Workspace(const LmParams<T>& p) : p_(p), c_(p.config) {
    d_ = static_cast<std::size_t>(c_.d_model);
    ff_ = static_cast<std::size_t>(c_.d_ff);
    heads_ = static_cast<std::size_t>(c_.n_heads);
    hd_ = static_cast<std::size_t>(c_.head_dim());
    vocab_ = static_cast<std::size_t>(c_.vocab_size);
    layers_.resize(p.layers.size());
  }

  // Runs the sequence forward and returns the summed NLL of its targets.
  double forward(const TokenSeq& seq, Rng* rng) {
    n_ = seq.size() - 1;
    inputs_.assign(seq.begin(), seq.end() - 1);
    targets_.assign(seq.begin() + 1, seq.end());
    const bool use_dropout = rng != nullptr && c_.dropout > 0.0;
    const std::size_t n = n_, d = d_;

    x0_.assign(n * d, T(0));
    drop_emb_.clear();
    for (std::size_t t = 0; t < n; ++t) {
      const auto emb = p_.token_embedding.row(static_cast<std::size_t>(inputs_[t]));
      const auto pos = p_.positional_embedding.row(t);
      for (std::size_t i = 0; i < d; ++i) x0_[t * d + i] = emb[i] + pos[i];
    }
    if (use_dropout) apply_dropout(x0_, drop_emb_, *rng);

    const std::vector<T>* x = &x0_;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      const auto& l = p_.layers[li];
      auto& lc = layers_[li];
      lc.x_in = *x;
      resize(lc, n);
      for (std::size_t t = 0; t < n; ++t) {
        kernels::layer_norm_row(&lc.norm1[t * d], &lc.mean1[t], &lc.rstd1[t], &lc.x_in[t * d],
                                l.norm1_gain.data.data(), l.norm1_bias.data.data(), d);
      }
      kernels::linear(lc.qkv.data(), lc.norm1.data(), l.qkv_weight.data.data(),
                      l.qkv_bias.data.data(), n, d, 3 * d);
      std::fill(lc.probs.begin(), lc.probs.end(), T(0));
      for (std::size_t h = 0; h < heads_; ++h) {
        for (std::size_t t = 0; t < n; ++t) {
          kernels::attend_row(&lc.attn[t * d + h * hd_], &lc.probs[(h * n + t) * n],
                              &lc.qkv[t * 3 * d + h * hd_], &lc.qkv[d + h * hd_],
                              &lc.qkv[2 * d + h * hd_], 3 * d, t, hd_);
        }
      }
      std::vector<T> proj(n * d);
      kernels::linear(proj.data(), lc.attn.data(), l.proj_weight.data.data(),
                      l.proj_bias.data.data(), n, d, d);
      lc.drop_attn.clear();
      if (use_dropout) apply_dropout(proj, lc.drop_attn, *rng);
      for (std::size_t i = 0; i < n * d; ++i) lc.x_mid[i] = lc.x_in[i] + proj[i];

      for (std::size_t t = 0; t < n; ++t) {
        kernels::layer_norm_row(&lc.norm2[t * d], &lc.mean2[t], &lc.rstd2[t], &lc.x_mid[t * d],
                                l.norm2_gain.data.data(), l.norm2_bias.data.data(), d);
      }
      kernels::linear(lc.hidden.data(), lc.norm2.data(), l.ffn_in_weight.data.data(),
                      l.ffn_in_bias.data.data(), n, d, ff_);
      for (std::size_t i = 0; i < lc.hidden.size(); ++i) lc.act[i] = gelu(lc.hidden[i]);
      std::vector<T> ffn(n * d);
      kernels::linear(ffn.data(), lc.act.data(), l.ffn_out_weight.data.data(),
                      l.ffn_out_bias.data.data(), n, ff_, d);
      lc.drop_ffn.clear();
      if (use_dropout) apply_dropout(ffn, lc.drop_ffn, *rng);
      out_.resize(n * d);
      for (std::size_t i = 0; i < n * d; ++i) out_[i] = lc.x_mid[i] + ffn[i];
      // The next layer copies out_ into its own x_in before out_ is reused.
      x = &out_;
    }
    x_final_ = *x;
    normf_.resize(n * d);
    meanf_.resize(n);
    rstdf_.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      kernels::layer_norm_row(&normf_[t * d], &meanf_[t], &rstdf_[t], &x_final_[t * d],
                              p_.final_gain.data.data(), p_.final_bias.data.data(), d);
    }

    probs_.resize(n * vocab_);
    double nll = 0.0;
    for (std::size_t v = 0; v < vocab_; ++v) {
      const T* e = p_.token_embedding.data.data() + v * d;
      for (std::size_t t = 0; t < n; ++t) probs_[t * vocab_ + v] = kernels::dot(&normf_[t * d], e, d);
    }
    for (std::size_t t = 0; t < n; ++t) {
      T* row = &probs_[t * vocab_];
      const T max_logit = *std::max_element(row, row + vocab_);
      T sum = 0;
      for (std::size_t v = 0; v < vocab_; ++v) {
        row[v] = std::exp(row[v] - max_logit);
        sum += row[v];
      }
      const auto target = static_cast<std::size_t>(targets_[t]);
      nll += std::log(static_cast<double>(sum)) -
             std::log(static_cast<double>(row[target]));
      const T inv = T(1) / sum;
      for (std::size_t v = 0; v < vocab_; ++v) row[v] *= inv;
    }
    return nll;
  }

  // Accumulates gradients of (sum NLL) * scale into g.
  void backward(LmParams<T>& g, T scale) {
    const std::size_t n = n_, d = d_;
    std::vector<T> dnorm(n * d, T(0));
    for (std::size_t v = 0; v < vocab_; ++v) {
      const T* e = p_.token_embedding.data.data() + v * d;
      T* de = g.token_embedding.data.data() + v * d;
      for (std::size_t t = 0; t < n; ++t) {
        const bool is_target = static_cast<std::size_t>(targets_[t]) == v;
        const T grad = (probs_[t * vocab_ + v] - (is_target ? T(1) : T(0))) * scale;
        const T* h = &normf_[t * d];
        T* dh = &dnorm[t * d];
        for (std::size_t i = 0; i < d; ++i) {
          dh[i] += grad * e[i];
          de[i] += grad * h[i];
        }
      }
    }
    std::vector<T> dx(n * d, T(0));
    for (std::size_t t = 0; t < n; ++t) {
      kernels::layer_norm_row_backward(&dx[t * d], g.final_gain.data.data(),
                                       g.final_bias.data.data(), &dnorm[t * d], &x_final_[t * d],
                                       p_.final_gain.data.data(), meanf_[t], rstdf_[t], d);
    }

    for (std::size_t li = layers_.size(); li-- > 0;) {
      const auto& l = p_.layers[li];
      auto& gl = g.layers[li];
      auto& lc = layers_[li];

      // x_out = x_mid + dropout(ffn(norm2(x_mid)))
      std::vector<T> dffn = dx;
      if (!lc.drop_ffn.empty()) {
        for (std::size_t i = 0; i < dffn.size(); ++i) dffn[i] *= lc.drop_ffn[i];
      }
      std::vector<T> dact(n * ff_, T(0));
      kernels::linear_backward(dact.data(), gl.ffn_out_weight.data.data(),
                               gl.ffn_out_bias.data.data(), dffn.data(), lc.act.data(),
                               l.ffn_out_weight.data.data(), n, ff_, d);
      for (std::size_t i = 0; i < dact.size(); ++i) dact[i] *= gelu_grad(lc.hidden[i]);
      std::vector<T> dnorm2(n * d, T(0));
      kernels::linear_backward(dnorm2.data(), gl.ffn_in_weight.data.data(),
                               gl.ffn_in_bias.data.data(), dact.data(), lc.norm2.data(),
                               l.ffn_in_weight.data.data(), n, d, ff_);
      std::vector<T> dmid = dx;
      for (std::size_t t = 0; t < n; ++t) {
        kernels::layer_norm_row_backward(&dmid[t * d], gl.norm2_gain.data.data(),
                                         gl.norm2_bias.data.data(), &dnorm2[t * d],
                                         &lc.x_mid[t * d], l.norm2_gain.data.data(), lc.mean2[t],
                                         lc.rstd2[t], d);
      }

      // x_mid = x_in + dropout(proj(attention(qkv(norm1(x_in)))))
      std::vector<T> dproj = dmid;
      if (!lc.drop_attn.empty()) {
        for (std::size_t i = 0; i < dproj.size(); ++i) dproj[i] *= lc.drop_attn[i];
      }
      std::vector<T> dattn(n * d, T(0));
      kernels::linear_backward(dattn.data(), gl.proj_weight.data.data(),
                               gl.proj_bias.data.data(), dproj.data(), lc.attn.data(),
                               l.proj_weight.data.data(), n, d, d);
      std::vector<T> dqkv(n * 3 * d, T(0));
      attention_backward(lc, dattn, dqkv);
      std::vector<T> dnorm1(n * d, T(0));
      kernels::linear_backward(dnorm1.data(), gl.qkv_weight.data.data(), gl.qkv_bias.data.data(),
                               dqkv.data(), lc.norm1.data(), l.qkv_weight.data.data(), n, d,
                               3 * d);
      dx = dmid;
      for (std::size_t t = 0; t < n; ++t) {
        kernels::layer_norm_row_backward(&dx[t * d], gl.norm1_gain.data.data(),
                                         gl.norm1_bias.data.data(), &dnorm1[t * d],
                                         &lc.x_in[t * d], l.norm1_gain.data.data(), lc.mean1[t],
                                         lc.rstd1[t], d);
      }
    }

    if (!drop_emb_.empty()) {
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= drop_emb_[i];
    }
    for (std::size_t t = 0; t < n; ++t) {
      T* de = g.token_embedding.data.data() + static_cast<std::size_t>(inputs_[t]) * d;
      T* dp = g.positional_embedding.data.data() + t * d;
      for (std::size_t i = 0; i < d; ++i) {
        de[i] += dx[t * d + i];
        dp[i] += dx[t * d + i];
      }
    }
  }

 private:
  void resize(LayerCache<T>& lc, std::size_t n) {
    const std::size_t d = d_;
    lc.norm1.resize(n * d);
    lc.mean1.resize(n);
    lc.rstd1.resize(n);
    lc.qkv.resize(n * 3 * d);
    lc.probs.resize(heads_ * n * n);
    lc.attn.resize(n * d);
    lc.x_mid.resize(n * d);
    lc.norm2.resize(n * d);
    lc.mean2.resize(n);
    lc.rstd2.resize(n);
    lc.hidden.resize(n * ff_);
    lc.act.resize(n * ff_);
  }

  void apply_dropout(std::vector<T>& values, std::vector<T>& mask, Rng& rng) {
    const double p = c_.dropout;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    mask.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      mask[i] = rng.uniform() < p ? T(0) : keep_scale;
      values[i] *= mask[i];
    }
  }

  void attention_backward(const LayerCache<T>& lc, const std::vector<T>& dattn,
                          std::vector<T>& dqkv) {
    const std::size_t n = n_, d = d_, hd = hd_;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    std::vector<T> dp(n);
    for (std::size_t h = 0; h < heads_; ++h) {
      for (std::size_t t = 0; t < n; ++t) {
        const T* prow = &lc.probs[(h * n + t) * n];
        const T* dout = &dattn[t * d + h * hd];
        const T* q = &lc.qkv[t * 3 * d + h * hd];
        T* dq = &dqkv[t * 3 * d + h * hd];
        T weighted = 0;
        for (std::size_t u = 0; u <= t; ++u) {
          const T* v = &lc.qkv[u * 3 * d + 2 * d + h * hd];
          T* dv = &dqkv[u * 3 * d + 2 * d + h * hd];
          T s = 0;
          for (std::size_t i = 0; i < hd; ++i) {
            s += dout[i] * v[i];
            dv[i] += prow[u] * dout[i];
          }
          dp[u] = s;
          weighted += prow[u] * s;
        }
        for (std::size_t u = 0; u <= t; ++u) {
          const T ds = prow[u] * (dp[u] - weighted) * scale;
          const T* k = &lc.qkv[u * 3 * d + d + h * hd];
          T* dk = &dqkv[u * 3 * d + d + h * hd];
          for (std::size_t i = 0; i < hd; ++i) {
            dq[i] += ds * k[i];
            dk[i] += ds * q[i];
          }
        }
      }
    }
  }

  const LmParams<T>& p_;
  const LmConfig& c_;
  std::size_t d_ = 0, ff_ = 0, heads_ = 0, hd_ = 0, vocab_ = 0, n_ = 0;
  TokenSeq inputs_, targets_;
  std::vector<T> x0_, drop_emb_, out_, x_final_, normf_, meanf_, rstdf_, probs_;
  std::vector<LayerCache<T>> layers_;
};

std::size_t count_targets(Batch batch) {
  std::size_t n = 0;
  for (const auto& seq : batch) n += seq.size() - 1;
  return n;
}

}  // namespace

template <typename T>
TrainState<T> TrainState<T>::fresh(const LmConfig& config) {
  Rng init_rng(derive_seed(config.seed, "init"));
  return from_params(LmParams<T>::initialized(config, init_rng),
                     derive_seed(config.seed, "dropout"));
}

template <typename T>
TrainState<T> TrainState<T>::from_params(LmParams<T> params, std::uint64_t rng_seed) {
  TrainState<T> s;
  s.first_moment = LmParams<T>::zeros(params.config);
  s.second_moment = LmParams<T>::zeros(params.config);
  s.params = std::move(params);
  s.rng = Rng(rng_seed);
  return s;
}

template <typename T>
LossAndGrads<T> loss_and_grads(const LmParams<T>& params, Batch batch, Rng* dropout_rng) {
  validate_batch(params.config, batch);
  LossAndGrads<T> out;
  out.grads = LmParams<T>::zeros(params.config);
  out.targets = count_targets(batch);
  const T scale = T(1) / static_cast<T>(out.targets);
  Workspace<T> ws(params);
  double total = 0.0;
  for (const auto& seq : batch) {
    total += ws.forward(seq, dropout_rng);
    ws.backward(out.grads, scale);
  }
  out.loss = total / static_cast<double>(out.targets);
  return out;
}

template <typename T>
LossAndGrads<T> loss_and_grads(TrainState<T>& state, Batch batch) {
  return loss_and_grads(state.params, batch, &state.rng);
}

template <typename T>
double batch_loss(const LmParams<T>& params, Batch batch) {
  validate_batch(params.config, batch);
  Workspace<T> ws(params);
  double total = 0.0;
  for (const auto& seq : batch) total += ws.forward(seq, nullptr);
  return total / static_cast<double>(count_targets(batch));
}

template <typename T>
double train_step(TrainState<T>& state, Batch batch, double lr, const AdamSettings& adam) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    fail(Errc::invalid_argument, "learning rate must be a finite non-negative number");
  }
  auto result = loss_and_grads(state, batch);
  auto grads = result.grads.named_tensors();
  for (const auto& [name, tensor] : grads) {
    for (T v : tensor->data) {
      if (!std::isfinite(v)) fail(Errc::non_finite, "non-finite gradient in tensor '" + name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(adam.beta1);
  const T b2 = static_cast<T>(adam.beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(adam.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(adam.beta2, t));
  const T step_size = static_cast<T>(lr);
  const T eps = static_cast<T>(adam.eps);
  auto params = state.params.named_tensors();
  auto m = state.first_moment.named_tensors();
  auto v = state.second_moment.named_tensors();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].second->data;
    auto& mk = m[k].second->data;
    auto& vk = v[k].second->data;
    const auto& gk = grads[k].second->data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      mk[i] = b1 * mk[i] + (T(1) - b1) * gk[i];
      vk[i] = b2 * vk[i] + (T(1) - b2) * gk[i] * gk[i];
      const T mhat = mk[i] / correction1;
      const T vhat = vk[i] / correction2;
      p[i] -= step_size * mhat / (std::sqrt(vhat) + eps);
    }
  }
  return result.loss;
}

template struct TrainState<float>;
template struct TrainState<double>;
template LossAndGrads<float> loss_and_grads(const LmParams<float>&, Batch, Rng*);
template LossAndGrads<double> loss_and_grads(const LmParams<double>&, Batch, Rng*);
template LossAndGrads<float> loss_and_grads(TrainState<float>&, Batch);
template LossAndGrads<double> loss_and_grads(TrainState<double>&, Batch);
template double batch_loss(const LmParams<float>&, Batch);
template double batch_loss(const LmParams<double>&, Batch);
template double train_step(TrainState<float>&, Batch, double, const AdamSettings&);
template double train_step(TrainState<double>&, Batch, double, const AdamSettings&);

}  // namespace ctikg::lm
