#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "auformer/errors.hpp"
#include "auformer/rng.hpp"

namespace auf {

// Dense row-major array, the universal value type. T is float for
// training and double for verification oracles.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != data.size()) throw ShapeError("tensor: shape/data size mismatch");
  }

  static size_t numel_of(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
      if (d < 1) throw ShapeError("tensor: dims must be >= 1");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) {
    size_t n = numel_of(s);
    return Tensor{std::move(s), std::vector<T>(n, T(0))};
  }

  size_t numel() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  T& at(size_t i) { return data[i]; }
  const T& at(size_t i) const { return data[i]; }

  // 2D / 3D / 4D indexing, row-major.
  T& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  const T& at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  T& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  const T& at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  T& at(int i, int j, int k, int l) {
    return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  const T& at(int i, int j, int k, int l) const {
    return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  Tensor& operator+=(const Tensor& o) {
    if (!same_shape(o)) throw ShapeError("tensor +=: shape mismatch");
    for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }

  Tensor& scale(T s) {
    for (auto& v : data) v *= s;
    return *this;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

enum class InitScheme { kZeros, kTruncNormal };

// Deterministic initialization: same (shape, scheme, sigma, seed) gives a
// bit-identical buffer.
template <class T>
Tensor<T> seeded_init(std::vector<int> shape, InitScheme scheme, double sigma, uint64_t seed) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  if (scheme == InitScheme::kTruncNormal) {
    Rng rng(seed);
    for (auto& v : t.data) v = static_cast<T>(rng.next_trunc_normal(sigma));
  }
  return t;
}

// Softmax along one axis; shift-invariant by construction (max subtracted).
template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  if (axis < 0 || axis >= x.rank()) throw ShapeError("softmax: axis out of range");
  Tensor<T> out = x;
  size_t inner = 1, outer = 1;
  size_t n = static_cast<size_t>(x.shape[axis]);
  for (int i = 0; i < axis; ++i) outer *= x.shape[i];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      size_t base = o * n * inner + in;
      T mx = out.data[base];
      for (size_t k = 1; k < n; ++k) mx = std::max(mx, out.data[base + k * inner]);
      T sum = T(0);
      for (size_t k = 0; k < n; ++k) {
        T e = std::exp(out.data[base + k * inner] - mx);
        out.data[base + k * inner] = e;
        sum += e;
      }
      for (size_t k = 0; k < n; ++k) out.data[base + k * inner] /= sum;
    }
  }
  return out;
}

template <class T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

// Exact (erf-based) GELU and its derivative.
template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
}

template <class T>
T gelu_grad(T x) {
  T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
  T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
  return cdf + x * pdf;
}

enum class Activation { kGelu, kSigmoid };

template <class T>
Tensor<T> activations(const Tensor<T>& x, Activation kind) {
  Tensor<T> out = x;
  for (auto& v : out.data) v = kind == Activation::kGelu ? gelu(v) : sigmoid(v);
  return out;
}

// Splits [N_t, D] tokens into the [CLS] row and the patch grid, restoring
// the 2D spatial structure. Requires a square patch count.
template <class T>
void tokens_to_grid(const Tensor<T>& tokens, Tensor<T>& cls, Tensor<T>& grid) {
  if (tokens.rank() != 2) throw ShapeError("tokens_to_grid: rank-2 input required");
  int nt = tokens.dim(0), d = tokens.dim(1);
  int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(nt - 1))));
  if (nt < 2 || side * side != nt - 1)
    throw ConfigError("tokens_to_grid: patch count " + std::to_string(nt - 1) + " is not square");
  cls = Tensor<T>::zeros({1, 1, d});
  std::copy(tokens.data.begin(), tokens.data.begin() + d, cls.data.begin());
  grid.shape = {side, side, d};
  grid.data.assign(tokens.data.begin() + d, tokens.data.end());
  return;
}

template <class T>
Tensor<T> grid_to_tokens(const Tensor<T>& cls, const Tensor<T>& grid) {
  int d = grid.dim(2);
  int nt = 1 + grid.dim(0) * grid.dim(1);
  Tensor<T> tokens = Tensor<T>::zeros({nt, d});
  std::copy(cls.data.begin(), cls.data.end(), tokens.data.begin());
  std::copy(grid.data.begin(), grid.data.end(), tokens.data.begin() + d);
  return tokens;
}

// [H,W,C] <-> [C,H,W] permutes for the conv path.
template <class T>
Tensor<T> hwc_to_chw(const Tensor<T>& x) {
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor<T> out = Tensor<T>::zeros({c, h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < c; ++k) out.at(k, i, j) = x.at(i, j, k);
  return out;
}

template <class T>
Tensor<T> chw_to_hwc(const Tensor<T>& x) {
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> out = Tensor<T>::zeros({h, w, c});
  for (int k = 0; k < c; ++k)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) out.at(i, j, k) = x.at(k, i, j);
  return out;
}

}  // namespace auf
