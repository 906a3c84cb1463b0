#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "auformer/moke.hpp"
#include "auformer/vit.hpp"

namespace auf {

struct ModelConfig {
  ViTConfig vit;
  MoKEConfig moke;
  int num_aus = 4;
  bool petl = true;    // insert MoKE groups at all
  bool collab = true;  // per-AU experts + averaging vs a single shared expert

  int experts_per_group() const { return collab ? num_aus : 1; }

  void validate() const {
    vit.validate();
    moke.validate();
    if (num_aus < 1) throw ConfigError("model: num_aus >= 1 required");
  }
};

template <class T>
struct ExpertGroup {
  std::vector<MoKEParams<T>> experts;
};

// Frozen backbone + 2L MoKE groups (MHSA site then MLP site per block)
// + prediction heads. Only groups and heads are learnable.
template <class T>
struct AUFormerModel {
  ModelConfig cfg;
  Backbone<T> backbone;
  std::vector<ExpertGroup<T>> groups;  // index 2l = MHSA site, 2l+1 = MLP site
  Linear<T> main_head;                 // D -> N
  std::vector<Linear<T>> aux_heads;    // N x (D -> 1)
};

template <class T>
AUFormerModel<T> make_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  AUFormerModel<T> m;
  m.cfg = cfg;
  m.backbone = make_backbone<T>(cfg.vit, Rng::derive(seed, 1));
  if (cfg.petl) {
    const int ne = cfg.experts_per_group();
    for (int g = 0; g < 2 * cfg.vit.depth; ++g) {
      ExpertGroup<T> grp;
      for (int i = 0; i < ne; ++i)
        grp.experts.push_back(
            make_moke<T>(cfg.vit.dim, cfg.moke, Rng::derive(seed, 1000 + 100 * g + i)));
      m.groups.push_back(std::move(grp));
    }
  }
  m.main_head = make_linear<T>(cfg.num_aus, cfg.vit.dim, InitScheme::kTruncNormal, 0.02,
                               Rng::derive(seed, 7));
  for (int i = 0; i < cfg.num_aus; ++i)
    m.aux_heads.push_back(make_linear<T>(1, cfg.vit.dim, InitScheme::kTruncNormal, 0.02,
                                         Rng::derive(seed, 8000 + i)));
  return m;
}

template <class T>
struct GroupCache {
  std::vector<Tensor<T>> inputs;   // u_i = site_in + inherited K_i
  std::vector<MokeCache<T>> mokes;
  std::vector<Tensor<T>> outputs;  // K_{l,i}
  LayerNormCache<T> lnc;           // post_norm site read only
};

template <class T>
struct ModelCache {
  std::vector<BlockCache<T>> blocks;
  std::vector<GroupCache<T>> groups;  // 2L, matching model.groups
  Tensor<T> x_last;                   // final token matrix
};

template <class T>
struct ModelOutput {
  Tensor<T> logits;      // [N]
  Tensor<T> aux_logits;  // [N]
  Tensor<T> probs;
  Tensor<T> aux_probs;
};

namespace detail {

template <class T>
void group_apply(const Tensor<T>& site_in, const ExpertGroup<T>& grp, const MoKEConfig& moke_cfg,
                 const std::vector<Tensor<T>>& inherited, bool collab, GroupCache<T>& gc,
                 Tensor<T>& k_group) {
  const size_t ne = grp.experts.size();
  gc.inputs.resize(ne);
  gc.mokes.assign(ne, MokeCache<T>());
  gc.outputs.resize(ne);
  for (size_t i = 0; i < ne; ++i) {
    Tensor<T> u = site_in;
    if (!inherited.empty()) u += inherited[i];
    gc.outputs[i] = moke_forward(u, grp.experts[i], moke_cfg, gc.mokes[i]);
    gc.inputs[i] = std::move(u);
  }
  k_group = gc.outputs[0];
  if (collab && ne > 1) {
    for (size_t i = 1; i < ne; ++i) k_group += gc.outputs[i];
    k_group.scale(T(1) / static_cast<T>(ne));
  }
}

}  // namespace detail

// Intra-group collaboration: each expert reads the site input plus its
// inherited knowledge, and the group output is the expert mean.
template <class T>
Tensor<T> group_forward(const Tensor<T>& x_site, const ExpertGroup<T>& grp,
                        const MoKEConfig& moke_cfg, const std::vector<Tensor<T>>& inherited,
                        GroupCache<T>& gc) {
  if (!inherited.empty() && inherited.size() != grp.experts.size())
    throw ShapeError("group_forward: inherited knowledge count mismatch");
  Tensor<T> k_group;
  detail::group_apply(x_site, grp, moke_cfg, inherited, true, gc, k_group);
  return k_group;
}

template <class T>
ModelOutput<T> model_forward(const Tensor<T>& image, AUFormerModel<T>& m, ModelCache<T>& cache) {
  const ViTConfig& vc = m.cfg.vit;
  const int n_au = m.cfg.num_aus;
  const bool petl = m.cfg.petl;
  const bool post_norm = vc.moke_input == MokeInput::kPostNorm;
  Tensor<T> x = patch_embed(image, m.backbone);
  cache.blocks.assign(static_cast<size_t>(vc.depth), BlockCache<T>());
  cache.groups.assign(petl ? static_cast<size_t>(2 * vc.depth) : 0, GroupCache<T>());

  std::vector<Tensor<T>> prev_k;  // inherited per-expert knowledge; empty before gen 1
  for (int l = 0; l < vc.depth; ++l) {
    BlockCache<T>& bc = cache.blocks[static_cast<size_t>(l)];
    Tensor<T> x_mid, x_out;
    if (!petl) {
      block_forward(x, m.backbone.blocks[static_cast<size_t>(l)], vc.heads,
                    static_cast<const Tensor<T>*>(nullptr), static_cast<const Tensor<T>*>(nullptr),
                    bc, x_mid, x_out);
    } else {
      GroupCache<T>& g1 = cache.groups[static_cast<size_t>(2 * l)];
      GroupCache<T>& g2 = cache.groups[static_cast<size_t>(2 * l + 1)];
      Tensor<T> site1 = post_norm
                            ? layernorm_forward(x, m.backbone.blocks[static_cast<size_t>(l)].ln1, g1.lnc)
                            : x;
      Tensor<T> k1;
      detail::group_apply(site1, m.groups[static_cast<size_t>(2 * l)], m.cfg.moke,
                          m.cfg.collab ? prev_k : std::vector<Tensor<T>>{}, m.cfg.collab, g1, k1);
      Tensor<T> term = mhsa_forward(x, m.backbone.blocks[static_cast<size_t>(l)], vc.heads, bc);
      bc.x = x;
      x_mid = x;
      x_mid += term;
      x_mid += k1;
      bc.x_mid = x_mid;
      Tensor<T> site2 =
          post_norm
              ? layernorm_forward(x_mid, m.backbone.blocks[static_cast<size_t>(l)].ln2, g2.lnc)
              : x_mid;
      Tensor<T> k2;
      detail::group_apply(site2, m.groups[static_cast<size_t>(2 * l + 1)], m.cfg.moke,
                          m.cfg.collab ? g1.outputs : std::vector<Tensor<T>>{}, m.cfg.collab, g2, k2);
      Tensor<T> mterm = mlp_forward(x_mid, m.backbone.blocks[static_cast<size_t>(l)], bc);
      x_out = x_mid;
      x_out += mterm;
      x_out += k2;
      if (m.cfg.collab) prev_k = g2.outputs;
    }
    x = std::move(x_out);
  }
  cache.x_last = x;

  ModelOutput<T> out;
  Tensor<T> cls = Tensor<T>::zeros({1, vc.dim});
  for (int k = 0; k < vc.dim; ++k) cls.at(0, k) = x.at(0, k);
  Tensor<T> z = linear_forward(cls, m.main_head);
  out.logits = Tensor<T>::zeros({n_au});
  for (int i = 0; i < n_au; ++i) out.logits.at(static_cast<size_t>(i)) = z.at(0, i);

  out.aux_logits = Tensor<T>::zeros({n_au});
  for (int i = 0; i < n_au; ++i) {
    Tensor<T> feat = Tensor<T>::zeros({1, vc.dim});
    if (petl) {
      const GroupCache<T>& last = cache.groups.back();
      const Tensor<T>& ko = last.outputs[m.cfg.collab ? static_cast<size_t>(i) : 0];
      for (int k = 0; k < vc.dim; ++k) feat.at(0, k) = ko.at(0, k);
    } else {
      for (int k = 0; k < vc.dim; ++k) feat.at(0, k) = x.at(0, k);
    }
    out.aux_logits.at(static_cast<size_t>(i)) =
        linear_forward(feat, m.aux_heads[static_cast<size_t>(i)]).at(0, 0);
  }
  out.probs = out.logits;
  for (auto& v : out.probs.data) v = sigmoid(v);
  out.aux_probs = out.aux_logits;
  for (auto& v : out.aux_probs.data) v = sigmoid(v);
  return out;
}

// Reverse pass from logit gradients; accumulates into learnable params
// only. Backbone parameter buffers are never touched.
template <class T>
void model_backward(AUFormerModel<T>& m, ModelCache<T>& cache, const Tensor<T>& d_logits,
                    const Tensor<T>& d_aux_logits) {
  const ViTConfig& vc = m.cfg.vit;
  const int n_au = m.cfg.num_aus;
  const bool petl = m.cfg.petl;
  const bool post_norm = vc.moke_input == MokeInput::kPostNorm;
  const int nt = vc.num_tokens();

  Tensor<T> dx = Tensor<T>::zeros({nt, vc.dim});
  {
    Tensor<T> cls = Tensor<T>::zeros({1, vc.dim});
    for (int k = 0; k < vc.dim; ++k) cls.at(0, k) = cache.x_last.at(0, k);
    Tensor<T> gz = Tensor<T>::zeros({1, n_au});
    for (int i = 0; i < n_au; ++i) gz.at(0, i) = d_logits.at(static_cast<size_t>(i));
    Tensor<T> d_cls = linear_backward(cls, m.main_head, gz, true);
    for (int k = 0; k < vc.dim; ++k) dx.at(0, k) += d_cls.at(0, k);
  }

  // Pending gradient into each expert's knowledge from its next consumer.
  const size_t ne = petl ? m.groups[0].experts.size() : 0;
  std::vector<Tensor<T>> pending(ne, Tensor<T>::zeros({nt, vc.dim}));
  for (int i = 0; i < n_au; ++i) {
    const T g = d_aux_logits.at(static_cast<size_t>(i));
    Tensor<T> feat = Tensor<T>::zeros({1, vc.dim});
    if (petl) {
      const Tensor<T>& ko = cache.groups.back().outputs[m.cfg.collab ? static_cast<size_t>(i) : 0];
      for (int k = 0; k < vc.dim; ++k) feat.at(0, k) = ko.at(0, k);
    } else {
      for (int k = 0; k < vc.dim; ++k) feat.at(0, k) = cache.x_last.at(0, k);
    }
    Tensor<T> gz = Tensor<T>::zeros({1, 1});
    gz.at(0, 0) = g;
    Tensor<T> d_feat = linear_backward(feat, m.aux_heads[static_cast<size_t>(i)], gz, true);
    if (petl) {
      Tensor<T>& dst = pending[m.cfg.collab ? static_cast<size_t>(i) : 0];
      for (int k = 0; k < vc.dim; ++k) dst.at(0, k) += d_feat.at(0, k);
    } else {
      for (int k = 0; k < vc.dim; ++k) dx.at(0, k) += d_feat.at(0, k);
    }
  }

  auto group_backward = [&](GroupCache<T>& gc, ExpertGroup<T>& grp, const Tensor<T>& d_k_group,
                            bool chained, std::vector<Tensor<T>>& d_inherited) -> Tensor<T> {
    const size_t n = grp.experts.size();
    Tensor<T> d_site = Tensor<T>::zeros({nt, vc.dim});
    const T share = m.cfg.collab ? T(1) / static_cast<T>(n) : T(1);
    std::vector<Tensor<T>> next_pending;
    for (size_t i = 0; i < n; ++i) {
      Tensor<T> dk = d_k_group;
      dk.scale(share);
      dk += pending[i];
      Tensor<T> du = moke_backward(grp.experts[i], m.cfg.moke, gc.mokes[i], dk);
      d_site += du;
      if (chained) next_pending.push_back(std::move(du));
    }
    d_inherited = std::move(next_pending);
    return d_site;
  };

  for (int l = vc.depth - 1; l >= 0; --l) {
    BlockCache<T>& bc = cache.blocks[static_cast<size_t>(l)];
    TransformerBlock<T>& blk = m.backbone.blocks[static_cast<size_t>(l)];
    // x_out = x_mid + MLP(x_mid) + K_group(MLP site)
    Tensor<T> d_x_mid = dx;
    d_x_mid += mlp_backward(blk, bc, dx);
    if (petl) {
      GroupCache<T>& g2 = cache.groups[static_cast<size_t>(2 * l + 1)];
      std::vector<Tensor<T>> chain;
      Tensor<T> d_site2 =
          group_backward(g2, m.groups[static_cast<size_t>(2 * l + 1)], dx, m.cfg.collab, chain);
      if (post_norm)
        d_x_mid += layernorm_backward(blk.ln2, g2.lnc, d_site2);
      else
        d_x_mid += d_site2;
      if (m.cfg.collab)
        pending = std::move(chain);  // grads into K^{MHSA}_{l,i}
      else
        for (auto& p : pending) p.fill(T(0));
    }
    // x_mid = x + MHSA(x) + K_group(MHSA site)
    Tensor<T> d_x = d_x_mid;
    d_x += mhsa_backward(blk, vc.heads, bc, d_x_mid);
    if (petl) {
      GroupCache<T>& g1 = cache.groups[static_cast<size_t>(2 * l)];
      std::vector<Tensor<T>> chain;
      Tensor<T> d_site1 =
          group_backward(g1, m.groups[static_cast<size_t>(2 * l)], d_x_mid, m.cfg.collab, chain);
      if (post_norm)
        d_x += layernorm_backward(blk.ln1, g1.lnc, d_site1);
      else
        d_x += d_site1;
      if (m.cfg.collab)
        pending = std::move(chain);  // grads into K^{MLP}_{l-1,i}
      else
        for (auto& p : pending) p.fill(T(0));
    }
    dx = std::move(d_x);
  }
  // Gradients into patch embedding / image are not needed (backbone frozen).
}

// Named learnable tensors: all group and head parameters, each exactly once.
template <class T>
std::vector<std::pair<std::string, Param<T>*>> learnable_parameters(AUFormerModel<T>& m) {
  std::vector<std::pair<std::string, Param<T>*>> out;
  auto add_conv = [&out](const std::string& prefix, Conv2dParams<T>& c) {
    out.emplace_back(prefix + ".weight", &c.weight);
    out.emplace_back(prefix + ".bias", &c.bias);
  };
  for (size_t g = 0; g < m.groups.size(); ++g) {
    const std::string site = (g % 2 == 0) ? "mhsa" : "mlp";
    const std::string base =
        "groups." + std::to_string(g / 2) + "." + site + ".experts.";
    for (size_t i = 0; i < m.groups[g].experts.size(); ++i) {
      MoKEParams<T>& e = m.groups[g].experts[i];
      const std::string p = base + std::to_string(i);
      add_conv(p + ".down", e.down);
      add_conv(p + ".basic", e.basic);
      if (m.cfg.moke.use_mrf) {
        for (int b = 0; b < 3; ++b)
          add_conv(p + ".mrf." + std::to_string(b), e.mrf[static_cast<size_t>(b)]);
        add_conv(p + ".fuse", e.fuse);
      }
      if (m.cfg.moke.use_ca) {
        add_conv(p + ".ca_q", e.ca_q);
        add_conv(p + ".ca_k", e.ca_k);
        add_conv(p + ".ca_v", e.ca_v);
      }
      add_conv(p + ".up", e.up);
    }
  }
  out.emplace_back("main_head.weight", &m.main_head.weight);
  out.emplace_back("main_head.bias", &m.main_head.bias);
  for (size_t i = 0; i < m.aux_heads.size(); ++i) {
    out.emplace_back("aux_heads." + std::to_string(i) + ".weight", &m.aux_heads[i].weight);
    out.emplace_back("aux_heads." + std::to_string(i) + ".bias", &m.aux_heads[i].bias);
  }
  return out;
}

// Frozen backbone tensors, named for serialization and freeze checks.
template <class T>
std::vector<std::pair<std::string, Param<T>*>> backbone_parameters(Backbone<T>& b) {
  std::vector<std::pair<std::string, Param<T>*>> out;
  out.emplace_back("patch_embed.weight", &b.patch_weight);
  out.emplace_back("patch_embed.bias", &b.patch_bias);
  out.emplace_back("cls_token", &b.cls_token);
  out.emplace_back("pos_embed", &b.pos_embed);
  for (size_t l = 0; l < b.blocks.size(); ++l) {
    const std::string p = "blocks." + std::to_string(l);
    TransformerBlock<T>& blk = b.blocks[l];
    out.emplace_back(p + ".ln1.gamma", &blk.ln1.gamma);
    out.emplace_back(p + ".ln1.beta", &blk.ln1.beta);
    out.emplace_back(p + ".ln2.gamma", &blk.ln2.gamma);
    out.emplace_back(p + ".ln2.beta", &blk.ln2.beta);
    out.emplace_back(p + ".wq.weight", &blk.wq.weight);
    out.emplace_back(p + ".wq.bias", &blk.wq.bias);
    out.emplace_back(p + ".wk.weight", &blk.wk.weight);
    out.emplace_back(p + ".wk.bias", &blk.wk.bias);
    out.emplace_back(p + ".wv.weight", &blk.wv.weight);
    out.emplace_back(p + ".wv.bias", &blk.wv.bias);
    out.emplace_back(p + ".wo.weight", &blk.wo.weight);
    out.emplace_back(p + ".wo.bias", &blk.wo.bias);
    out.emplace_back(p + ".mlp1.weight", &blk.mlp1.weight);
    out.emplace_back(p + ".mlp1.bias", &blk.mlp1.bias);
    out.emplace_back(p + ".mlp2.weight", &blk.mlp2.weight);
    out.emplace_back(p + ".mlp2.bias", &blk.mlp2.bias);
  }
  return out;
}

struct ParamCount {
  long long learnable = 0;
  long long frozen = 0;
  double ratio() const {
    return static_cast<double>(learnable) / static_cast<double>(learnable + frozen);
  }
};

template <class T>
ParamCount count_params(AUFormerModel<T>& m) {
  ParamCount c;
  for (auto& [name, p] : learnable_parameters(m)) c.learnable += static_cast<long long>(p->v.numel());
  for (auto& [name, p] : backbone_parameters(m.backbone)) c.frozen += static_cast<long long>(p->v.numel());
  return c;
}

// FLOP accounting: 2 FLOPs per multiply-accumulate, counted for conv,
// matmul, attention QK/AV, and CA neighborhood products. Elementwise and
// softmax work is excluded.
struct FlopCount {
  long long backbone = 0;
  long long moke = 0;
  long long heads = 0;
  long long total() const { return backbone + moke + heads; }
  double moke_overhead() const {
    return static_cast<double>(moke) / static_cast<double>(backbone);
  }
};

inline long long conv_flops(int h, int w, int c_in, int c_out, int k) {
  return 2LL * h * w * c_in * c_out * k * k;
}

inline FlopCount estimate_flops(const ModelConfig& cfg) {
  FlopCount f;
  const int d = cfg.vit.dim, nt = cfg.vit.num_tokens(), hd = cfg.vit.heads;
  const int side = cfg.vit.grid_side(), hid = cfg.vit.mlp_hidden();
  // patch embed: one k x k conv tap per patch
  f.backbone += 2LL * side * side * d * cfg.vit.channels * cfg.vit.patch_size * cfg.vit.patch_size;
  long long per_block = 0;
  per_block += 4LL * 2 * nt * d * d;             // q,k,v,o projections
  per_block += 2LL * 2 * hd * nt * nt * (d / hd);  // QK^T and AV
  per_block += 2LL * 2 * nt * d * hid;           // mlp1 + mlp2
  f.backbone += cfg.vit.depth * per_block;
  if (cfg.petl) {
    const int dr = cfg.moke.reduced_channels, s2 = cfg.moke.neighborhood * cfg.moke.neighborhood;
    long long per_path_cells[2] = {1LL * side * side, 1LL};  // grid, cls
    long long per_expert = 0;
    for (long long cells : per_path_cells) {
      per_expert += 2LL * cells * d * dr;       // down
      per_expert += 2LL * cells * dr * dr * 9;  // basic 3x3
      if (cfg.moke.use_mrf) {
        per_expert += 3LL * 2 * cells * dr * dr * 9;  // dilated branches
        per_expert += 2LL * cells * 3 * dr * dr;      // fuse 1x1
      }
      if (cfg.moke.use_ca) {
        per_expert += 3LL * 2 * cells * dr * dr;  // q,k,v 1x1
        per_expert += 2LL * 2 * cells * dr * s2;  // logits + aggregation
      }
      per_expert += 2LL * cells * dr * d;  // up
    }
    f.moke = 2LL * cfg.vit.depth * cfg.experts_per_group() * per_expert;
  }
  f.heads += 2LL * d * cfg.num_aus;           // main head
  f.heads += 2LL * d * cfg.num_aus;           // aux heads (N x D->1)
  return f;
}

}  // namespace auf
