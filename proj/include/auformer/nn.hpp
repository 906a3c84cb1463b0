#pragma once

#include "auformer/conv.hpp"
#include "auformer/tensor.hpp"

namespace auf {

template <class T>
struct Linear {
  Param<T> weight;  // [out, in]
  Param<T> bias;    // [out]

  int out_features() const { return weight.v.dim(0); }
  int in_features() const { return weight.v.dim(1); }
};

template <class T>
Linear<T> make_linear(int out, int in, InitScheme scheme, double sigma, uint64_t seed) {
  Linear<T> l;
  l.weight.set(seeded_init<T>({out, in}, scheme, sigma, seed));
  l.bias.set(Tensor<T>::zeros({out}));
  return l;
}

// x: [N, in] -> [N, out]. Runs against a transposed weight copy so the
// inner loop is a contiguous axpy rather than a serial dot reduction.
template <class T>
Tensor<T> linear_forward(const Tensor<T>& x, const Linear<T>& l) {
  if (x.dim(1) != l.in_features()) throw ShapeError("linear: feature dim mismatch");
  const int n = x.dim(0), fin = l.in_features(), fout = l.out_features();
  std::vector<T> wt(static_cast<size_t>(fin) * fout);
  for (int o = 0; o < fout; ++o)
    for (int k = 0; k < fin; ++k)
      wt[static_cast<size_t>(k) * fout + o] = l.weight.v.data[static_cast<size_t>(o) * fin + k];
  Tensor<T> out = Tensor<T>::zeros({n, fout});
  for (int i = 0; i < n; ++i) {
    const T* xr = &x.data[static_cast<size_t>(i) * fin];
    T* orow = &out.data[static_cast<size_t>(i) * fout];
    for (int o = 0; o < fout; ++o) orow[o] = l.bias.v.data[static_cast<size_t>(o)];
    for (int k = 0; k < fin; ++k) {
      const T xv = xr[k];
      const T* wr = &wt[static_cast<size_t>(k) * fout];
      for (int o = 0; o < fout; ++o) orow[o] += xv * wr[o];
    }
  }
  return out;
}

template <class T>
Tensor<T> linear_backward(const Tensor<T>& x, Linear<T>& l, const Tensor<T>& grad_out,
                          bool want_param_grads = true) {
  const int n = x.dim(0), fin = l.in_features(), fout = l.out_features();
  Tensor<T> grad_in = Tensor<T>::zeros({n, fin});
  for (int i = 0; i < n; ++i) {
    const T* xr = &x.data[static_cast<size_t>(i) * fin];
    T* gr = &grad_in.data[static_cast<size_t>(i) * fin];
    for (int o = 0; o < fout; ++o) {
      const T g = grad_out.at(i, o);
      const T* wr = &l.weight.v.data[static_cast<size_t>(o) * fin];
      if (want_param_grads) {
        l.bias.g.at(static_cast<size_t>(o)) += g;
        T* wg = &l.weight.g.data[static_cast<size_t>(o) * fin];
        for (int k = 0; k < fin; ++k) wg[k] += g * xr[k];
      }
      for (int k = 0; k < fin; ++k) gr[k] += g * wr[k];
    }
  }
  return grad_in;
}

// Per-token LayerNorm over the channel axis with scale + shift.
template <class T>
struct LayerNorm {
  Param<T> gamma;  // [D]
  Param<T> beta;   // [D]
  T eps = T(1e-6);
};

template <class T>
LayerNorm<T> make_layernorm(int d) {
  LayerNorm<T> ln;
  ln.gamma.set(Tensor<T>::zeros({d}));
  ln.gamma.v.fill(T(1));
  ln.beta.set(Tensor<T>::zeros({d}));
  return ln;
}

template <class T>
struct LayerNormCache {
  Tensor<T> xhat;          // normalized input, [N, D]
  std::vector<T> inv_std;  // per token
};

template <class T>
Tensor<T> layernorm_forward(const Tensor<T>& x, const LayerNorm<T>& ln, LayerNormCache<T>& cache) {
  const int n = x.dim(0), d = x.dim(1);
  Tensor<T> out = Tensor<T>::zeros({n, d});
  cache.xhat = Tensor<T>::zeros({n, d});
  cache.inv_std.assign(static_cast<size_t>(n), T(0));
  for (int i = 0; i < n; ++i) {
    T mean = T(0);
    for (int k = 0; k < d; ++k) mean += x.at(i, k);
    mean /= T(d);
    T var = T(0);
    for (int k = 0; k < d; ++k) {
      T c = x.at(i, k) - mean;
      var += c * c;
    }
    var /= T(d);
    T inv = T(1) / std::sqrt(var + ln.eps);
    cache.inv_std[static_cast<size_t>(i)] = inv;
    for (int k = 0; k < d; ++k) {
      T xh = (x.at(i, k) - mean) * inv;
      cache.xhat.at(i, k) = xh;
      out.at(i, k) = xh * ln.gamma.v.at(static_cast<size_t>(k)) + ln.beta.v.at(static_cast<size_t>(k));
    }
  }
  return out;
}

// Input gradient only; backbone LN parameters are frozen.
template <class T>
Tensor<T> layernorm_backward(const LayerNorm<T>& ln, const LayerNormCache<T>& cache,
                             const Tensor<T>& grad_out) {
  const int n = grad_out.dim(0), d = grad_out.dim(1);
  Tensor<T> grad_in = Tensor<T>::zeros({n, d});
  for (int i = 0; i < n; ++i) {
    T sum_g = T(0), sum_gx = T(0);
    for (int k = 0; k < d; ++k) {
      T gh = grad_out.at(i, k) * ln.gamma.v.at(static_cast<size_t>(k));
      sum_g += gh;
      sum_gx += gh * cache.xhat.at(i, k);
    }
    const T inv = cache.inv_std[static_cast<size_t>(i)];
    for (int k = 0; k < d; ++k) {
      T gh = grad_out.at(i, k) * ln.gamma.v.at(static_cast<size_t>(k));
      grad_in.at(i, k) = inv * (gh - (sum_g + cache.xhat.at(i, k) * sum_gx) / T(d));
    }
  }
  return grad_in;
}

}  // namespace auf
