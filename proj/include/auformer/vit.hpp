#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "auformer/nn.hpp"
#include "auformer/tensor.hpp"

namespace auf {

// Where MoKE groups read the residual stream.
enum class MokeInput { kPreNorm, kPostNorm };

struct ViTConfig {
  int image_size = 32;
  int patch_size = 4;
  int channels = 1;
  int depth = 4;
  int dim = 64;
  int heads = 4;
  double mlp_ratio = 4.0;
  MokeInput moke_input = MokeInput::kPreNorm;

  int grid_side() const { return image_size / patch_size; }
  int num_tokens() const { return 1 + grid_side() * grid_side(); }
  int mlp_hidden() const { return static_cast<int>(mlp_ratio * dim); }

  void validate() const {
    if (image_size % patch_size != 0) throw ConfigError("vit: image_size % patch_size != 0");
    if (dim % heads != 0) throw ConfigError("vit: dim % heads != 0");
    if (depth < 1 || dim < 1 || heads < 1) throw ConfigError("vit: bad depth/dim/heads");
  }
};

// Pre-norm Transformer block. All parameters stay frozen during training.
template <class T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  Linear<T> wq, wk, wv, wo;
  Linear<T> mlp1, mlp2;
};

template <class T>
struct BlockCache {
  LayerNormCache<T> ln1c, ln2c;
  Tensor<T> x;                    // block input
  Tensor<T> q, k, v;              // [N_t, D]
  std::vector<Tensor<T>> attn;    // per head, [N_t, N_t]
  Tensor<T> att_concat;           // [N_t, D]
  Tensor<T> x_mid;                // input to the MLP half
  Tensor<T> mlp_pre;              // hidden pre-activation [N_t, H]
};

template <class T>
struct Backbone {
  ViTConfig cfg;
  Param<T> patch_weight;  // [D, C, ps, ps]
  Param<T> patch_bias;    // [D]
  Param<T> cls_token;     // [1, D]
  Param<T> pos_embed;     // [N_t, D]
  std::vector<TransformerBlock<T>> blocks;
};

template <class T>
Backbone<T> make_backbone(const ViTConfig& cfg, uint64_t seed) {
  cfg.validate();
  Backbone<T> b;
  b.cfg = cfg;
  const double sg = 0.02;
  uint64_t s = seed;
  auto next = [&s]() { return Rng::derive(s, ++s); };
  b.patch_weight.set(seeded_init<T>({cfg.dim, cfg.channels, cfg.patch_size, cfg.patch_size},
                                    InitScheme::kTruncNormal, sg, next()));
  b.patch_bias.set(Tensor<T>::zeros({cfg.dim}));
  b.cls_token.set(seeded_init<T>({1, cfg.dim}, InitScheme::kTruncNormal, sg, next()));
  b.pos_embed.set(seeded_init<T>({cfg.num_tokens(), cfg.dim}, InitScheme::kTruncNormal, sg, next()));
  for (int l = 0; l < cfg.depth; ++l) {
    TransformerBlock<T> blk;
    blk.ln1 = make_layernorm<T>(cfg.dim);
    blk.ln2 = make_layernorm<T>(cfg.dim);
    blk.wq = make_linear<T>(cfg.dim, cfg.dim, InitScheme::kTruncNormal, sg, next());
    blk.wk = make_linear<T>(cfg.dim, cfg.dim, InitScheme::kTruncNormal, sg, next());
    blk.wv = make_linear<T>(cfg.dim, cfg.dim, InitScheme::kTruncNormal, sg, next());
    blk.wo = make_linear<T>(cfg.dim, cfg.dim, InitScheme::kTruncNormal, sg, next());
    blk.mlp1 = make_linear<T>(cfg.mlp_hidden(), cfg.dim, InitScheme::kTruncNormal, sg, next());
    blk.mlp2 = make_linear<T>(cfg.dim, cfg.mlp_hidden(), InitScheme::kTruncNormal, sg, next());
    b.blocks.push_back(std::move(blk));
  }
  return b;
}

// Tokenization: non-overlapping patch projection, prepend [CLS], add
// positional embedding.
template <class T>
Tensor<T> patch_embed(const Tensor<T>& image, const Backbone<T>& b) {
  const ViTConfig& cfg = b.cfg;
  if (image.rank() != 3 || image.dim(0) != cfg.channels || image.dim(1) != cfg.image_size ||
      image.dim(2) != cfg.image_size)
    throw ShapeError("patch_embed: image dims do not match config");
  const int ps = cfg.patch_size, side = cfg.grid_side(), d = cfg.dim, c = cfg.channels;
  Tensor<T> tokens = Tensor<T>::zeros({cfg.num_tokens(), d});
  for (int k = 0; k < d; ++k) tokens.at(0, k) = b.cls_token.v.at(0, k);
  for (int gy = 0; gy < side; ++gy)
    for (int gx = 0; gx < side; ++gx) {
      const int row = 1 + gy * side + gx;
      for (int o = 0; o < d; ++o) {
        T acc = b.patch_bias.v.at(static_cast<size_t>(o));
        for (int ic = 0; ic < c; ++ic)
          for (int py = 0; py < ps; ++py)
            for (int px = 0; px < ps; ++px)
              acc += b.patch_weight.v.at(o, ic, py, px) * image.at(ic, gy * ps + py, gx * ps + px);
        tokens.at(row, o) = acc;
      }
    }
  for (size_t i = 0; i < tokens.data.size(); ++i) tokens.data[i] += b.pos_embed.v.data[i];
  return tokens;
}

// MHSA term only; the residual is applied by the caller.
template <class T>
Tensor<T> mhsa_forward(const Tensor<T>& x, const TransformerBlock<T>& blk, int heads,
                       BlockCache<T>& cache) {
  const int n = x.dim(0), d = x.dim(1);
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Tensor<T> h = layernorm_forward(x, blk.ln1, cache.ln1c);
  cache.q = linear_forward(h, blk.wq);
  cache.k = linear_forward(h, blk.wk);
  cache.v = linear_forward(h, blk.wv);
  cache.attn.assign(static_cast<size_t>(heads), Tensor<T>());
  cache.att_concat = Tensor<T>::zeros({n, d});
  const T* qd = cache.q.data.data();
  const T* kd = cache.k.data.data();
  const T* vd = cache.v.data.data();
  for (int hd = 0; hd < heads; ++hd) {
    const int off = hd * dh;
    Tensor<T> logits = Tensor<T>::zeros({n, n});
    for (int i = 0; i < n; ++i) {
      const T* qr = qd + static_cast<size_t>(i) * d + off;
      T* lrow = &logits.data[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) {
        const T* kr = kd + static_cast<size_t>(j) * d + off;
        T acc = T(0);
        for (int k = 0; k < dh; ++k) acc += qr[k] * kr[k];
        lrow[j] = acc * scale;
      }
    }
    Tensor<T> a = softmax(logits, 1);
    for (int i = 0; i < n; ++i) {
      const T* arow = &a.data[static_cast<size_t>(i) * n];
      T* orow = &cache.att_concat.data[static_cast<size_t>(i) * d + off];
      for (int j = 0; j < n; ++j) {
        const T av = arow[j];
        const T* vr = vd + static_cast<size_t>(j) * d + off;
        for (int k = 0; k < dh; ++k) orow[k] += av * vr[k];
      }
    }
    cache.attn[static_cast<size_t>(hd)] = std::move(a);
  }
  return linear_forward(cache.att_concat, blk.wo);
}

// Gradient of the MHSA term w.r.t. the block input x.
template <class T>
Tensor<T> mhsa_backward(TransformerBlock<T>& blk, int heads, BlockCache<T>& cache,
                        const Tensor<T>& grad_term) {
  const int n = grad_term.dim(0), d = grad_term.dim(1);
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Tensor<T> d_att = linear_backward(cache.att_concat, blk.wo, grad_term, false);
  Tensor<T> dq = Tensor<T>::zeros({n, d});
  Tensor<T> dk = Tensor<T>::zeros({n, d});
  Tensor<T> dv = Tensor<T>::zeros({n, d});
  for (int hd = 0; hd < heads; ++hd) {
    const int off = hd * dh;
    const Tensor<T>& a = cache.attn[static_cast<size_t>(hd)];
    // d a[i,j] = sum_k d_att[i,off+k] v[j,off+k]; dv[j] += a[i,j] d_att[i]
    Tensor<T> da = Tensor<T>::zeros({n, n});
    for (int i = 0; i < n; ++i) {
      const T* gi = &d_att.data[static_cast<size_t>(i) * d + off];
      const T* arow = &a.data[static_cast<size_t>(i) * n];
      T* darow = &da.data[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) {
        const T* vr = &cache.v.data[static_cast<size_t>(j) * d + off];
        T* dvr = &dv.data[static_cast<size_t>(j) * d + off];
        const T av = arow[j];
        T acc = T(0);
        for (int k = 0; k < dh; ++k) {
          acc += gi[k] * vr[k];
          dvr[k] += av * gi[k];
        }
        darow[j] = acc;
      }
    }
    // softmax backward per row, then through the scaled dot product.
    for (int i = 0; i < n; ++i) {
      const T* arow = &a.data[static_cast<size_t>(i) * n];
      const T* darow = &da.data[static_cast<size_t>(i) * n];
      const T* qi = &cache.q.data[static_cast<size_t>(i) * d + off];
      T* dqi = &dq.data[static_cast<size_t>(i) * d + off];
      T dot = T(0);
      for (int j = 0; j < n; ++j) dot += darow[j] * arow[j];
      for (int j = 0; j < n; ++j) {
        const T dl = arow[j] * (darow[j] - dot) * scale;
        const T* kr = &cache.k.data[static_cast<size_t>(j) * d + off];
        T* dkr = &dk.data[static_cast<size_t>(j) * d + off];
        for (int k = 0; k < dh; ++k) {
          dqi[k] += dl * kr[k];
          dkr[k] += dl * qi[k];
        }
      }
    }
  }
  Tensor<T> dh_sum = linear_backward(cache.q, blk.wq, dq, false);
  dh_sum += linear_backward(cache.k, blk.wk, dk, false);
  dh_sum += linear_backward(cache.v, blk.wv, dv, false);
  return layernorm_backward(blk.ln1, cache.ln1c, dh_sum);
}

// MLP term only: LN -> W1 -> GELU -> W2.
template <class T>
Tensor<T> mlp_forward(const Tensor<T>& x_mid, const TransformerBlock<T>& blk, BlockCache<T>& cache) {
  Tensor<T> h = layernorm_forward(x_mid, blk.ln2, cache.ln2c);
  cache.mlp_pre = linear_forward(h, blk.mlp1);
  Tensor<T> act = activations(cache.mlp_pre, Activation::kGelu);
  return linear_forward(act, blk.mlp2);
}

template <class T>
Tensor<T> mlp_backward(TransformerBlock<T>& blk, BlockCache<T>& cache, const Tensor<T>& grad_term) {
  Tensor<T> act = activations(cache.mlp_pre, Activation::kGelu);
  Tensor<T> d_act = linear_backward(act, blk.mlp2, grad_term, false);
  for (size_t i = 0; i < d_act.data.size(); ++i) d_act.data[i] *= gelu_grad(cache.mlp_pre.data[i]);
  Tensor<T> dh = linear_backward(cache.ln2c.xhat /*unused values*/, blk.mlp1, d_act, false);
  return layernorm_backward(blk.ln2, cache.ln2c, dh);
}

// One block with optional residual-point injections (Eq. of the adapted
// stream). inject == nullptr means the plain block.
template <class T>
void block_forward(const Tensor<T>& x, const TransformerBlock<T>& blk, int heads,
                   const Tensor<T>* inject_mhsa, const Tensor<T>* inject_mlp, BlockCache<T>& cache,
                   Tensor<T>& x_mid, Tensor<T>& x_out) {
  cache.x = x;
  Tensor<T> term = mhsa_forward(x, blk, heads, cache);
  x_mid = x;
  x_mid += term;
  if (inject_mhsa) x_mid += *inject_mhsa;
  cache.x_mid = x_mid;
  Tensor<T> mterm = mlp_forward(x_mid, blk, cache);
  x_out = x_mid;
  x_out += mterm;
  if (inject_mlp) x_out += *inject_mlp;
}

// Plain frozen-ViT forward; returns the final token matrix.
template <class T>
Tensor<T> backbone_forward(const Tensor<T>& image, const Backbone<T>& b) {
  Tensor<T> x = patch_embed(image, b);
  BlockCache<T> cache;
  for (const auto& blk : b.blocks) {
    Tensor<T> mid, out;
    block_forward(x, blk, b.cfg.heads, static_cast<const Tensor<T>*>(nullptr),
                  static_cast<const Tensor<T>*>(nullptr), cache, mid, out);
    x = std::move(out);
  }
  return x;
}

}  // namespace auf
