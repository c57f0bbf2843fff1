#pragma once

// Row-wise kernels shared by the inference decoder and the training path.
// Each kernel processes rows independently in a fixed loop order, so a row
// computed alone is bitwise identical to the same row computed in a batch.

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "ctikg/lm/ops.hpp"

namespace ctikg::lm::kernels {

// Eight interleaved partial sums combined in a fixed order.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
  }
  for (; i < n; ++i) lanes[i % 8] += a[i] * b[i];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
}

// out[r, :] = bias + in[r, :] * w   with w of shape [k x n]
// Rows are processed four at a time so each weight row is read once per
// group; every output element still accumulates in ascending i.
template <typename T>
void linear(T* out, const T* in, const T* w, const T* bias, std::size_t rows, std::size_t k,
            std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* o = out + r * n;
    if (bias) {
      std::copy(bias, bias + n, o);
    } else {
      std::fill(o, o + n, T(0));
    }
  }
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) {
    T* o0 = out + r * n;
    T* o1 = o0 + n;
    T* o2 = o1 + n;
    T* o3 = o2 + n;
    const T* x = in + r * k;
    for (std::size_t i = 0; i < k; ++i) {
      const T x0 = x[i], x1 = x[k + i], x2 = x[2 * k + i], x3 = x[3 * k + i];
      const T* wi = w + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T wij = wi[j];
        o0[j] += x0 * wij;
        o1[j] += x1 * wij;
        o2[j] += x2 * wij;
        o3[j] += x3 * wij;
      }
    }
  }
  for (; r < rows; ++r) {
    T* o = out + r * n;
    const T* x = in + r * k;
    for (std::size_t i = 0; i < k; ++i) {
      const T xi = x[i];
      const T* wi = w + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += xi * wi[j];
    }
  }
}

// Accumulates into din, dw, dbias. Row contributions to dw and dbias are
// added in ascending row order.
template <typename T>
void linear_backward(T* din, T* dw, T* dbias, const T* dout, const T* in, const T* w,
                     std::size_t rows, std::size_t k, std::size_t n) {
  if (dbias) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* g = dout + r * n;
      for (std::size_t j = 0; j < n; ++j) dbias[j] += g[j];
    }
  }
  constexpr std::size_t kGroup = 4;
  for (std::size_t r0 = 0; r0 < rows; r0 += kGroup) {
    const std::size_t r1 = std::min(rows, r0 + kGroup);
    for (std::size_t i = 0; i < k; ++i) {
      const T* wi = w + i * n;
      T* dwi = dw + i * n;
      for (std::size_t r = r0; r < r1; ++r) {
        const T* g = dout + r * n;
        din[r * k + i] += dot(g, wi, n);
        const T xi = in[r * k + i];
        for (std::size_t j = 0; j < n; ++j) dwi[j] += xi * g[j];
      }
    }
  }
}

template <typename T>
void layer_norm_row(T* out, T* mean_out, T* rstd_out, const T* x, const T* gain, const T* bias,
                    std::size_t d) {
  T mean = 0;
  for (std::size_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<T>(d);
  T var = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const T c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<T>(d);
  const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
  for (std::size_t i = 0; i < d; ++i) out[i] = gain[i] * ((x[i] - mean) * rstd) + bias[i];
  if (mean_out) *mean_out = mean;
  if (rstd_out) *rstd_out = rstd;
}

// Accumulates into dx, dgain, dbias.
template <typename T>
void layer_norm_row_backward(T* dx, T* dgain, T* dbias, const T* dout, const T* x, const T* gain,
                             T mean, T rstd, std::size_t d) {
  T sum_dxhat = 0;
  T sum_dxhat_xhat = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const T xhat = (x[i] - mean) * rstd;
    const T dxhat = dout[i] * gain[i];
    sum_dxhat += dxhat;
    sum_dxhat_xhat += dxhat * xhat;
    dgain[i] += dout[i] * xhat;
    dbias[i] += dout[i];
  }
  const T inv_d = T(1) / static_cast<T>(d);
  for (std::size_t i = 0; i < d; ++i) {
    const T xhat = (x[i] - mean) * rstd;
    const T dxhat = dout[i] * gain[i];
    dx[i] += rstd * (dxhat - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
  }
}

// One query row attending over keys 0..last (inclusive). `keys` and `values`
// are addressed with a row stride; `probs` receives last+1 weights.
template <typename T>
void attend_row(T* out, T* probs, const T* query, const T* keys, const T* values,
                std::size_t stride, std::size_t last, std::size_t head_dim) {
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  T max_score = -INFINITY;
  for (std::size_t u = 0; u <= last; ++u) {
    const T* key = keys + u * stride;
    const T s = dot(query, key, head_dim) * scale;
    probs[u] = s;
    max_score = std::max(max_score, s);
  }
  T sum = 0;
  for (std::size_t u = 0; u <= last; ++u) {
    probs[u] = std::exp(probs[u] - max_score);
    sum += probs[u];
  }
  const T inv = T(1) / sum;
  for (std::size_t u = 0; u <= last; ++u) probs[u] *= inv;
  std::fill(out, out + head_dim, T(0));
  for (std::size_t u = 0; u <= last; ++u) {
    const T p = probs[u];
    const T* value = values + u * stride;
    for (std::size_t i = 0; i < head_dim; ++i) out[i] += p * value[i];
  }
}

}  // namespace ctikg::lm::kernels
