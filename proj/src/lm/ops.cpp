#include "ctikg/lm/ops.hpp"

#include <string>

#include "ctikg/common/error.hpp"
#include "kernels.hpp"

namespace ctikg::lm {

template <typename T>
std::vector<T> layer_norm(std::span<const T> x, std::span<const T> gain, std::span<const T> bias) {
  if (x.empty()) fail(Errc::shape_mismatch, "layer_norm of an empty vector");
  if (gain.size() != x.size() || bias.size() != x.size()) {
    fail(Errc::shape_mismatch, "layer_norm: input has " + std::to_string(x.size()) +
                                   " dims but gain/bias have " + std::to_string(gain.size()) +
                                   "/" + std::to_string(bias.size()));
  }
  std::vector<T> out(x.size());
  kernels::layer_norm_row(out.data(), static_cast<T*>(nullptr), static_cast<T*>(nullptr),
                          x.data(), gain.data(), bias.data(), x.size());
  return out;
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, bool causal) {
  const std::size_t n = q.rows();
  if (n == 0) fail(Errc::empty_input, "attention over an empty sequence");
  if (k.rows() != n || k.cols() != q.cols()) fail(Errc::shape_mismatch, "Q and K shapes differ");
  const std::size_t dk = q.cols();
  auto weights = Tensor<T>::matrix(n, n);
  std::vector<T> scratch(dk);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t last = causal ? t : n - 1;
    // Values are irrelevant here; attend over the keys themselves.
    kernels::attend_row(scratch.data(), &weights(t, 0), &q(t, 0), k.data.data(), k.data.data(),
                        dk, last, dk);
  }
  return weights;
}

template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               bool causal) {
  const std::size_t n = q.rows();
  if (n == 0) fail(Errc::empty_input, "attention over an empty sequence");
  if (k.rows() != n || k.cols() != q.cols()) fail(Errc::shape_mismatch, "Q and K shapes differ");
  if (v.rows() != n) fail(Errc::shape_mismatch, "V must have one row per key");
  const auto weights = attention_weights(q, k, causal);
  auto out = Tensor<T>::matrix(n, v.cols());
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t u = 0; u < n; ++u) {
      const T p = weights(t, u);
      if (p == T(0)) continue;
      for (std::size_t i = 0; i < v.cols(); ++i) out(t, i) += p * v(u, i);
    }
  }
  return out;
}

template std::vector<float> layer_norm(std::span<const float>, std::span<const float>,
                                       std::span<const float>);
template std::vector<double> layer_norm(std::span<const double>, std::span<const double>,
                                        std::span<const double>);
template Tensor<float> attention_weights(const Tensor<float>&, const Tensor<float>&, bool);
template Tensor<double> attention_weights(const Tensor<double>&, const Tensor<double>&, bool);
template Tensor<float> scaled_dot_attention(const Tensor<float>&, const Tensor<float>&,
                                            const Tensor<float>&, bool);
template Tensor<double> scaled_dot_attention(const Tensor<double>&, const Tensor<double>&,
                                             const Tensor<double>&, bool);

}  // namespace ctikg::lm
