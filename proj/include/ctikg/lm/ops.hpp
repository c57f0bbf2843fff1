#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "ctikg/lm/tensor.hpp"

namespace ctikg::lm {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kGeluCoeff = 0.044715;

/// gain * (x - mean) / sqrt(var + eps) + bias, population variance.
template <typename T>
std::vector<T> layer_norm(std::span<const T> x, std::span<const T> gain, std::span<const T> bias);

/// GELU, tanh approximation:
///   0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <typename T>
T gelu(T x) {
  const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T k = static_cast<T>(kGeluCoeff);
  return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  const T c = static_cast<T>(0.7978845608028654);
  const T k = static_cast<T>(kGeluCoeff);
  const T th = std::tanh(c * (x + k * x * x * x));
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * c * (T(1) + T(3) * k * x * x);
}

/// softmax(Q K^T / sqrt(d_k)) with optional causal mask; rows of the result
/// sum to one and masked entries are exactly zero.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, bool causal);

/// attention_weights(Q, K) * V.
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               bool causal);

}  // namespace ctikg::lm
