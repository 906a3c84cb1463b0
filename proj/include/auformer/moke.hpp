#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "auformer/conv.hpp"
#include "auformer/tensor.hpp"

namespace auf {

struct MoKEConfig {
  int reduced_channels = 4;                 // d
  std::array<int, 3> dilations = {1, 3, 5};  // r1 < r2 < r3
  int neighborhood = 3;                     // S, odd
  double scale = 1.0;
  bool use_mrf = true;
  bool use_ca = true;

  void validate() const {
    if (reduced_channels < 1) throw ConfigError("moke: d >= 1 required");
    if (!(dilations[0] > 0 && dilations[0] < dilations[1] && dilations[1] < dilations[2]))
      throw ConfigError("moke: dilations must be strictly increasing positive");
    if (neighborhood < 3 || neighborhood % 2 == 0) throw ConfigError("moke: S must be odd >= 3");
  }
};

// One expert's parameters: bottleneck down/up projections around the
// basic conv and the MRF / CA operators.
template <class T>
struct MoKEParams {
  Conv2dParams<T> down;              // D -> d, 1x1
  Conv2dParams<T> basic;             // d -> d, 3x3
  std::array<Conv2dParams<T>, 3> mrf;  // d -> d, 3x3 dilated
  Conv2dParams<T> fuse;              // 3d -> d, 1x1
  Conv2dParams<T> ca_q, ca_k, ca_v;  // d -> d, 1x1
  Conv2dParams<T> up;                // d -> D, 1x1, zero-init
};

// up is zero-initialized so a fresh expert contributes exactly nothing
// (identity-at-init for the whole adapted model).
template <class T>
MoKEParams<T> make_moke(int dim, const MoKEConfig& cfg, uint64_t seed) {
  cfg.validate();
  const int d = cfg.reduced_channels;
  const double sg = 0.02;
  uint64_t s = seed;
  auto next = [&s]() { return Rng::derive(s, ++s); };
  MoKEParams<T> p;
  p.down = make_conv<T>(d, dim, 1, 1, InitScheme::kTruncNormal, sg, next());
  p.basic = make_conv<T>(d, d, 3, 1, InitScheme::kTruncNormal, sg, next());
  for (int i = 0; i < 3; ++i)
    p.mrf[static_cast<size_t>(i)] =
        make_conv<T>(d, d, 3, cfg.dilations[static_cast<size_t>(i)], InitScheme::kTruncNormal, sg, next());
  p.fuse = make_conv<T>(d, 3 * d, 1, 1, InitScheme::kTruncNormal, sg, next());
  p.ca_q = make_conv<T>(d, d, 1, 1, InitScheme::kTruncNormal, sg, next());
  p.ca_k = make_conv<T>(d, d, 1, 1, InitScheme::kTruncNormal, sg, next());
  p.ca_v = make_conv<T>(d, d, 1, 1, InitScheme::kTruncNormal, sg, next());
  p.up = make_conv<T>(dim, d, 1, 1, InitScheme::kZeros, 0.0, next());
  return p;
}

template <class T>
struct MrfCache {
  Tensor<T> concat;  // [3d, H, W]
};

// Parallel dilated 3x3 convs, concatenated and fused back to d channels.
template <class T>
Tensor<T> mrf_forward(const Tensor<T>& m, const MoKEParams<T>& p, MrfCache<T>& cache) {
  const int d = m.dim(0), h = m.dim(1), w = m.dim(2);
  cache.concat = Tensor<T>::zeros({3 * d, h, w});
  for (int br = 0; br < 3; ++br) {
    Tensor<T> out = conv2d(m, p.mrf[static_cast<size_t>(br)]);
    std::copy(out.data.begin(), out.data.end(),
              cache.concat.data.begin() + static_cast<size_t>(br) * out.data.size());
  }
  return conv2d(cache.concat, p.fuse);
}

template <class T>
Tensor<T> mrf_backward(const Tensor<T>& m, MoKEParams<T>& p, const MrfCache<T>& cache,
                       const Tensor<T>& grad_out) {
  const int d = m.dim(0), h = m.dim(1), w = m.dim(2);
  Tensor<T> d_concat = conv2d_backward(cache.concat, p.fuse, grad_out);
  Tensor<T> d_m = Tensor<T>::zeros({d, h, w});
  const size_t chunk = static_cast<size_t>(d) * h * w;
  for (int br = 0; br < 3; ++br) {
    Tensor<T> slice = Tensor<T>::zeros({d, h, w});
    std::copy(d_concat.data.begin() + static_cast<size_t>(br) * chunk,
              d_concat.data.begin() + static_cast<size_t>(br + 1) * chunk, slice.data.begin());
    d_m += conv2d_backward(m, p.mrf[static_cast<size_t>(br)], slice);
  }
  return d_m;
}

template <class T>
struct CaCache {
  Tensor<T> q, k, v;  // [d, H, W]
  Tensor<T> weights;  // [d, H, W, S*S]; out-of-bounds neighbor slots are 0
  Tensor<T> out;      // [d, H, W]
};

// Context-aware operator: per-channel softmax attention over the in-bounds
// S x S neighborhood. Out-of-bounds neighbors are excluded, not zero-padded.
template <class T>
Tensor<T> ca_forward(const Tensor<T>& m, const MoKEParams<T>& p, const MoKEConfig& cfg,
                     CaCache<T>& cache) {
  const int d = m.dim(0), h = m.dim(1), w = m.dim(2);
  const int S = cfg.neighborhood, r = S / 2;
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
  cache.q = conv2d(m, p.ca_q);
  cache.k = conv2d(m, p.ca_k);
  cache.v = conv2d(m, p.ca_v);
  cache.weights = Tensor<T>::zeros({d, h, w, S * S});
  cache.out = Tensor<T>::zeros({d, h, w});
  std::vector<T> logits(static_cast<size_t>(S) * S);
  for (int c = 0; c < d; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const T qv = cache.q.at(c, y, x);
        int cnt = 0;
        T mx = T(0);
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            T l = qv * cache.k.at(c, ny, nx) * inv_sqrt_d;
            logits[static_cast<size_t>(cnt)] = l;
            mx = (cnt == 0) ? l : std::max(mx, l);
            ++cnt;
          }
        T sum = T(0);
        for (int i = 0; i < cnt; ++i) {
          logits[static_cast<size_t>(i)] = std::exp(logits[static_cast<size_t>(i)] - mx);
          sum += logits[static_cast<size_t>(i)];
        }
        T acc = T(0);
        int slot = 0, idx = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx, ++slot) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            const T wgt = logits[static_cast<size_t>(idx++)] / sum;
            cache.weights.at(c, y, x, slot) = wgt;
            acc += wgt * cache.v.at(c, ny, nx);
          }
        cache.out.at(c, y, x) = acc;
      }
  return cache.out;
}

template <class T>
Tensor<T> ca_backward(const Tensor<T>& m, MoKEParams<T>& p, const MoKEConfig& cfg,
                      const CaCache<T>& cache, const Tensor<T>& grad_out) {
  const int d = m.dim(0), h = m.dim(1), w = m.dim(2);
  const int S = cfg.neighborhood, r = S / 2;
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
  Tensor<T> dq = Tensor<T>::zeros({d, h, w});
  Tensor<T> dk = Tensor<T>::zeros({d, h, w});
  Tensor<T> dv = Tensor<T>::zeros({d, h, w});
  for (int c = 0; c < d; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const T g = grad_out.at(c, y, x);
        if (g == T(0)) continue;
        const T outv = cache.out.at(c, y, x);
        const T qv = cache.q.at(c, y, x);
        int slot = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx, ++slot) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            const T wgt = cache.weights.at(c, y, x, slot);
            dv.at(c, ny, nx) += wgt * g;
            // softmax jacobian: dl_j = g * w_j * (v_j - out)
            const T dl = g * wgt * (cache.v.at(c, ny, nx) - outv);
            dq.at(c, y, x) += dl * cache.k.at(c, ny, nx) * inv_sqrt_d;
            dk.at(c, ny, nx) += dl * qv * inv_sqrt_d;
          }
      }
  Tensor<T> d_m = conv2d_backward(m, p.ca_q, dq);
  d_m += conv2d_backward(m, p.ca_k, dk);
  d_m += conv2d_backward(m, p.ca_v, dv);
  return d_m;
}

// Forward state for one spatial path (patch grid or the 1x1 [CLS] map).
template <class T>
struct MokePathCache {
  Tensor<T> in_chw;
  Tensor<T> m0;     // after down
  Tensor<T> m1;     // after basic, pre-GELU
  Tensor<T> m2;     // basic features M''
  MrfCache<T> mrf;
  CaCache<T> ca;
  Tensor<T> fused;
};

template <class T>
struct MokeCache {
  MokePathCache<T> grid, cls;
};

template <class T>
Tensor<T> moke_path_forward(const Tensor<T>& in_chw, const MoKEParams<T>& p, const MoKEConfig& cfg,
                            MokePathCache<T>& c) {
  c.in_chw = in_chw;
  c.m0 = conv2d(in_chw, p.down);
  c.m1 = conv2d(c.m0, p.basic);
  c.m2 = activations(c.m1, Activation::kGelu);
  c.fused = c.m2;
  if (cfg.use_mrf) c.fused += mrf_forward(c.m2, p, c.mrf);
  if (cfg.use_ca) c.fused += ca_forward(c.m2, p, cfg, c.ca);
  Tensor<T> out = conv2d(c.fused, p.up);
  out.scale(static_cast<T>(cfg.scale));
  return out;
}

template <class T>
Tensor<T> moke_path_backward(MoKEParams<T>& p, const MoKEConfig& cfg, MokePathCache<T>& c,
                             Tensor<T> grad_out) {
  grad_out.scale(static_cast<T>(cfg.scale));
  Tensor<T> d_fused = conv2d_backward(c.fused, p.up, grad_out);
  Tensor<T> d_m2 = d_fused;
  if (cfg.use_mrf) d_m2 += mrf_backward(c.m2, p, c.mrf, d_fused);
  if (cfg.use_ca) d_m2 += ca_backward(c.m2, p, cfg, c.ca, d_fused);
  for (size_t i = 0; i < d_m2.data.size(); ++i) d_m2.data[i] *= gelu_grad(c.m1.data[i]);
  Tensor<T> d_m0 = conv2d_backward(c.m0, p.basic, d_m2);
  return conv2d_backward(c.in_chw, p.down, d_m0);
}

// Full expert on a token matrix. The [CLS] token runs through the same
// parameters as a 1x1 image.
template <class T>
Tensor<T> moke_forward(const Tensor<T>& tokens, const MoKEParams<T>& p, const MoKEConfig& cfg,
                       MokeCache<T>& cache) {
  Tensor<T> cls, grid;
  tokens_to_grid(tokens, cls, grid);
  Tensor<T> grid_out = moke_path_forward(hwc_to_chw(grid), p, cfg, cache.grid);
  Tensor<T> cls_out = moke_path_forward(hwc_to_chw(cls), p, cfg, cache.cls);
  return grid_to_tokens(chw_to_hwc(cls_out), chw_to_hwc(grid_out));
}

template <class T>
Tensor<T> moke_backward(MoKEParams<T>& p, const MoKEConfig& cfg, MokeCache<T>& cache,
                        const Tensor<T>& grad_tokens) {
  Tensor<T> d_cls_hwc, d_grid_hwc;
  tokens_to_grid(grad_tokens, d_cls_hwc, d_grid_hwc);
  Tensor<T> d_grid = moke_path_backward(p, cfg, cache.grid, hwc_to_chw(d_grid_hwc));
  Tensor<T> d_cls = moke_path_backward(p, cfg, cache.cls, hwc_to_chw(d_cls_hwc));
  return grid_to_tokens(chw_to_hwc(d_cls), chw_to_hwc(d_grid));
}

}  // namespace auf
