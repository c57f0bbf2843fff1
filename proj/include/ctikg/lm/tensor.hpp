#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ctikg::lm {

/// Dense row-major tensor of rank 1 or 2.
template <typename T>
struct Tensor {
  std::vector<std::uint32_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::uint32_t> dims, T fill = T(0)) : shape(std::move(dims)) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    data.assign(n, fill);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values = {}) {
    Tensor t({static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols)});
    if (!values.empty()) t.data = std::move(values);
    return t;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  bool operator==(const Tensor&) const = default;
};

}  // namespace ctikg::lm
