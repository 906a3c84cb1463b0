#pragma once

#include <algorithm>
#include <vector>

#include "auformer/tensor.hpp"

namespace auf {

// A learnable tensor with its gradient buffer.
template <class T>
struct Param {
  Tensor<T> v;
  Tensor<T> g;

  void set(Tensor<T> value) {
    v = std::move(value);
    g = Tensor<T>::zeros(v.shape);
  }
  void zero_grad() { g.fill(T(0)); }
};

// Dilated 2D convolution parameters, cross-correlation semantics.
// padding == dilation for k=3 and 0 for k=1 keeps spatial size.
template <class T>
struct Conv2dParams {
  Param<T> weight;  // [C_out, C_in, k, k]
  Param<T> bias;    // [C_out]
  int dilation = 1;
  int padding = 0;

  int out_channels() const { return weight.v.dim(0); }
  int in_channels() const { return weight.v.dim(1); }
  int kernel() const { return weight.v.dim(2); }
};

template <class T>
Conv2dParams<T> make_conv(int c_out, int c_in, int k, int dilation, InitScheme scheme,
                          double sigma, uint64_t seed) {
  Conv2dParams<T> p;
  p.dilation = dilation;
  p.padding = (k == 1) ? 0 : dilation * (k - 1) / 2;
  p.weight.set(seeded_init<T>({c_out, c_in, k, k}, scheme, sigma, seed));
  p.bias.set(Tensor<T>::zeros({c_out}));
  return p;
}

namespace detail {

// Fixed-lane partial sums keep the dot product vectorizable without
// reassociating the accumulation order across runs.
template <class T>
T lane_dot(const T* a, const T* b, size_t m) {
  T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  size_t i = 0;
  for (; i + 8 <= m; i += 8)
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  T s = T(0);
  for (int j = 0; j < 8; ++j) s += acc[j];
  for (; i < m; ++i) s += a[i] * b[i];
  return s;
}

// Unrolled patch matrix: rows indexed by (ic, ky, kx), columns by output
// pixel, zero-filled where the tap falls outside the image.
template <class T>
void im2col(const T* in, int ci, int h, int w, int k, int dil, int pad, std::vector<T>& cols) {
  const size_t plane = static_cast<size_t>(h) * w;
  cols.assign(static_cast<size_t>(ci) * k * k * plane, T(0));
  T* cp = cols.data();
  for (int ic = 0; ic < ci; ++ic) {
    const T* ip = in + static_cast<size_t>(ic) * plane;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, cp += plane) {
        const int oy = ky * dil - pad, ox = kx * dil - pad;
        const int y0 = std::max(0, -oy), y1 = std::min(h, h - oy);
        const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
        for (int y = y0; y < y1; ++y) {
          T* crow = cp + static_cast<size_t>(y) * w;
          const T* irow = ip + static_cast<size_t>(y + oy) * w + ox;
          for (int x = x0; x < x1; ++x) crow[x] = irow[x];
        }
      }
  }
}

}  // namespace detail

// Same-size dilated conv on a [C_in, H, W] map, via im2col so every inner
// loop runs over a contiguous output plane.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Conv2dParams<T>& p) {
  if (input.rank() != 3) throw ShapeError("conv2d: rank-3 [C,H,W] input required");
  if (input.dim(0) != p.in_channels()) throw ShapeError("conv2d: input channel mismatch");
  const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int co = p.out_channels(), k = p.kernel(), dil = p.dilation, pad = p.padding;
  const size_t plane = static_cast<size_t>(h) * w;
  const int taps = ci * k * k;
  static thread_local std::vector<T> cols;
  detail::im2col(input.data.data(), ci, h, w, k, dil, pad, cols);
  Tensor<T> out = Tensor<T>::zeros({co, h, w});
  const T* wt = p.weight.v.data.data();
  for (int oc = 0; oc < co; ++oc) {
    T* op = out.data.data() + static_cast<size_t>(oc) * plane;
    const T b = p.bias.v.data[static_cast<size_t>(oc)];
    for (size_t s = 0; s < plane; ++s) op[s] = b;
    const T* wr = wt + static_cast<size_t>(oc) * taps;
    for (int r = 0; r < taps; ++r) {
      const T wv = wr[r];
      const T* cp = cols.data() + static_cast<size_t>(r) * plane;
      for (size_t s = 0; s < plane; ++s) op[s] += wv * cp[s];
    }
  }
  return out;
}

// Accumulates weight/bias grads into p and returns the input gradient.
template <class T>
Tensor<T> conv2d_backward(const Tensor<T>& input, Conv2dParams<T>& p, const Tensor<T>& grad_out,
                          bool want_param_grads = true) {
  const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int co = p.out_channels(), k = p.kernel(), dil = p.dilation, pad = p.padding;
  const size_t plane = static_cast<size_t>(h) * w;
  const int taps = ci * k * k;
  static thread_local std::vector<T> cols, dcols;
  detail::im2col(input.data.data(), ci, h, w, k, dil, pad, cols);
  dcols.assign(static_cast<size_t>(taps) * plane, T(0));
  const T* go = grad_out.data.data();
  const T* wt = p.weight.v.data.data();
  for (int oc = 0; oc < co; ++oc) {
    const T* gp = go + static_cast<size_t>(oc) * plane;
    if (want_param_grads) {
      T acc = T(0);
      for (size_t s = 0; s < plane; ++s) acc += gp[s];
      p.bias.g.data[static_cast<size_t>(oc)] += acc;
    }
    const T* wr = wt + static_cast<size_t>(oc) * taps;
    for (int r = 0; r < taps; ++r) {
      const T* cp = cols.data() + static_cast<size_t>(r) * plane;
      T* dp = dcols.data() + static_cast<size_t>(r) * plane;
      if (want_param_grads)
        p.weight.g.data[static_cast<size_t>(oc) * taps + r] += detail::lane_dot(gp, cp, plane);
      const T wv = wr[r];
      for (size_t s = 0; s < plane; ++s) dp[s] += wv * gp[s];
    }
  }
  // col2im: scatter the patch-matrix gradient back onto the input grid.
  Tensor<T> grad_in = Tensor<T>::zeros({ci, h, w});
  const T* dc = dcols.data();
  for (int ic = 0; ic < ci; ++ic) {
    T* dip = grad_in.data.data() + static_cast<size_t>(ic) * plane;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, dc += plane) {
        const int oy = ky * dil - pad, ox = kx * dil - pad;
        const int y0 = std::max(0, -oy), y1 = std::min(h, h - oy);
        const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
        for (int y = y0; y < y1; ++y) {
          T* drow = dip + static_cast<size_t>(y + oy) * w + ox;
          const T* crow = dc + static_cast<size_t>(y) * w;
          for (int x = x0; x < x1; ++x) drow[x] += crow[x];
        }
      }
  }
  return grad_in;
}

}  // namespace auf
