#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "auformer/checkpoint.hpp"
#include "auformer/rng.hpp"
#include "auformer/vit.hpp"

using namespace auf;

namespace {

Tensor64 random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor64 t = Tensor64::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.next_normal();
  return t;
}

ViTConfig toy_config() {
  ViTConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.channels = 1;
  cfg.depth = 2;
  cfg.dim = 8;
  cfg.heads = 2;
  return cfg;
}

// Plain attention written from the definition: per head, softmax of the
// scaled score matrix times V, heads concatenated, output projection.
Tensor64 attention_reference(const Tensor64& x, const TransformerBlock<double>& blk, int heads) {
  const int n = x.dim(0), d = x.dim(1), dh = d / heads;
  LayerNormCache<double> lnc;
  Tensor64 h = layernorm_forward(x, blk.ln1, lnc);
  Tensor64 q = linear_forward(h, blk.wq);
  Tensor64 k = linear_forward(h, blk.wk);
  Tensor64 v = linear_forward(h, blk.wv);
  Tensor64 cat = Tensor64::zeros({n, d});
  for (int hd = 0; hd < heads; ++hd) {
    for (int i = 0; i < n; ++i) {
      std::vector<double> score(static_cast<size_t>(n));
      double mx = -1e300;
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += q.at(i, hd * dh + c) * k.at(j, hd * dh + c);
        score[static_cast<size_t>(j)] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, score[static_cast<size_t>(j)]);
      }
      double z = 0.0;
      for (double& s : score) {
        s = std::exp(s - mx);
        z += s;
      }
      for (int j = 0; j < n; ++j)
        for (int c = 0; c < dh; ++c)
          cat.at(i, hd * dh + c) += score[static_cast<size_t>(j)] / z * v.at(j, hd * dh + c);
    }
  }
  return linear_forward(cat, blk.wo);
}

}  // namespace

TEST_CASE("patch embed emits the expected token layout") {
  ViTConfig cfg;  // defaults: 32px, patch 4, dim 64
  Backbone<double> b = make_backbone<double>(cfg, 5);
  Rng rng(1);
  Tensor64 img = random_tensor({1, 32, 32}, rng);
  Tensor64 tokens = patch_embed(img, b);
  CHECK(tokens.shape == std::vector<int>{65, 64});

  // zero image, zero pos_embed: row 0 is the cls token, the rest the bias
  Backbone<double> zb = make_backbone<double>(cfg, 5);
  zb.pos_embed.v.fill(0.0);
  Tensor64 zt = patch_embed(Tensor64::zeros({1, 32, 32}), zb);
  for (int c = 0; c < 64; ++c) {
    CHECK(zt.at(0, c) == zb.cls_token.v.at(0, c));
    CHECK(zt.at(1, c) == zb.patch_bias.v.at(static_cast<size_t>(c)));
    CHECK(zt.at(64, c) == zb.patch_bias.v.at(static_cast<size_t>(c)));
  }
}

TEST_CASE("patch embed is local to the changed patch") {
  ViTConfig cfg;
  Backbone<double> b = make_backbone<double>(cfg, 6);
  Rng rng(2);
  Tensor64 img = random_tensor({1, 32, 32}, rng);
  Tensor64 img2 = img;
  // perturb only the patch at grid (3, 5)
  for (int y = 12; y < 16; ++y)
    for (int x = 20; x < 24; ++x) img2.at(0, y, x) += 1.0;
  Tensor64 t1 = patch_embed(img, b);
  Tensor64 t2 = patch_embed(img2, b);
  const int changed_row = 1 + 3 * 8 + 5;
  for (int r = 0; r < 65; ++r)
    for (int c = 0; c < 64; ++c) {
      if (r == changed_row)
        continue;
      else
        CHECK(t1.at(r, c) == t2.at(r, c));
    }
  bool moved = false;
  for (int c = 0; c < 64; ++c) moved = moved || t1.at(changed_row, c) != t2.at(changed_row, c);
  CHECK(moved);
}

TEST_CASE("attention with zero weights is the output bias broadcast") {
  ViTConfig cfg = toy_config();
  Backbone<double> b = make_backbone<double>(cfg, 7);
  TransformerBlock<double>& blk = b.blocks[0];
  blk.wq.weight.v.fill(0.0);
  blk.wk.weight.v.fill(0.0);
  blk.wv.weight.v.fill(0.0);
  blk.wv.bias.v.fill(0.0);
  blk.wo.weight.v.fill(0.0);
  blk.wo.bias.v.fill(0.25);
  Rng rng(3);
  Tensor64 x = random_tensor({5, 8}, rng);
  BlockCache<double> cache;
  Tensor64 out = mhsa_forward(x, blk, cfg.heads, cache);
  for (double v : out.data) CHECK(v == 0.25);
}

TEST_CASE("single token attention weight is exactly 1") {
  ViTConfig cfg = toy_config();
  cfg.heads = 1;
  Backbone<double> b = make_backbone<double>(cfg, 8);
  Rng rng(4);
  Tensor64 x = random_tensor({1, 8}, rng);
  BlockCache<double> cache;
  mhsa_forward(x, b.blocks[0], 1, cache);
  REQUIRE(cache.attn.size() == 1);
  CHECK(cache.attn[0].numel() == 1);
  CHECK(cache.attn[0].data[0] == 1.0);
}

TEST_CASE("attention matches the reference on small token counts") {
  ViTConfig cfg = toy_config();
  Rng rng(11);
  for (int n = 2; n <= 4; ++n) {
    Backbone<double> b = make_backbone<double>(cfg, 100 + static_cast<uint64_t>(n));
    Tensor64 x = random_tensor({n, 8}, rng);
    BlockCache<double> cache;
    Tensor64 got = mhsa_forward(x, b.blocks[0], cfg.heads, cache);
    Tensor64 want = attention_reference(x, b.blocks[0], cfg.heads);
    for (size_t i = 0; i < got.numel(); ++i) CHECK(std::abs(got.data[i] - want.data[i]) < 1e-10);
  }
}

TEST_CASE("mlp with zero weights is bias only") {
  ViTConfig cfg = toy_config();
  Backbone<double> b = make_backbone<double>(cfg, 12);
  TransformerBlock<double>& blk = b.blocks[0];
  blk.mlp1.weight.v.fill(0.0);
  blk.mlp1.bias.v.fill(0.0);
  blk.mlp2.weight.v.fill(0.0);
  blk.mlp2.bias.v.fill(-1.5);
  Rng rng(5);
  Tensor64 x = random_tensor({4, 8}, rng);
  BlockCache<double> cache;
  Tensor64 out = mlp_forward(x, blk, cache);
  CHECK(out.shape == x.shape);
  for (double v : out.data) CHECK(v == -1.5);
}

TEST_CASE("injection points are exact and linear") {
  ViTConfig cfg = toy_config();
  Backbone<double> b = make_backbone<double>(cfg, 13);
  Rng rng(6);
  Tensor64 x = random_tensor({5, 8}, rng);
  BlockCache<double> c0, c1, c2;
  Tensor64 mid0, out0, mid1, out1, mid2, out2;
  block_forward(x, b.blocks[0], cfg.heads, static_cast<const Tensor64*>(nullptr),
                static_cast<const Tensor64*>(nullptr), c0, mid0, out0);

  // zero injection reproduces the plain block bit-exactly
  Tensor64 zero = Tensor64::zeros({5, 8});
  block_forward(x, b.blocks[0], cfg.heads, &zero, &zero, c1, mid1, out1);
  CHECK(mid1.data == mid0.data);
  CHECK(out1.data == out0.data);

  // injecting -mhsa cancels the attention term
  Tensor64 neg = mhsa_forward(x, b.blocks[0], cfg.heads, c2);
  for (auto& v : neg.data) v = -v;
  block_forward(x, b.blocks[0], cfg.heads, &neg, &zero, c2, mid2, out2);
  for (size_t i = 0; i < x.numel(); ++i)
    CHECK(mid2.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));

  // scaling the injected tensor shifts x_mid by exactly that multiple
  Tensor64 v = random_tensor({5, 8}, rng);
  Tensor64 v2 = v;
  v2.scale(2.0);
  BlockCache<double> c3, c4;
  Tensor64 mid3, out3, mid4, out4;
  block_forward(x, b.blocks[0], cfg.heads, &v, &zero, c3, mid3, out3);
  block_forward(x, b.blocks[0], cfg.heads, &v2, &zero, c4, mid4, out4);
  for (size_t i = 0; i < x.numel(); ++i)
    CHECK(mid4.data[i] - mid3.data[i] == doctest::Approx(v.data[i]).epsilon(1e-9));
}

TEST_CASE("backbone weights round-trip through the container") {
  ViTConfig cfg = toy_config();
  Backbone<float> b = make_backbone<float>(cfg, 21);
  const std::string p1 = "/tmp/auf_bb1.aufw", p2 = "/tmp/auf_bb2.aufw";
  save_backbone(b, p1);
  Backbone<float> b2 = make_backbone<float>(cfg, 22);
  load_backbone(b2, p1);
  CHECK(b2.patch_weight.v.data == b.patch_weight.v.data);
  CHECK(b2.pos_embed.v.data == b.pos_embed.v.data);
  CHECK(b2.blocks[1].mlp2.weight.v.data == b.blocks[1].mlp2.weight.v.data);
  save_backbone(b2, p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);

  // loading into a model of a different width is a shape error
  ViTConfig wide = toy_config();
  wide.dim = 16;
  Backbone<float> bw = make_backbone<float>(wide, 23);
  CHECK_THROWS_AS(load_backbone(bw, p1), ShapeError);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("backbone forward is deterministic") {
  ViTConfig cfg = toy_config();
  Backbone<double> b = make_backbone<double>(cfg, 31);
  Rng rng(9);
  Tensor64 img = random_tensor({1, 8, 8}, rng);
  Tensor64 o1 = backbone_forward(img, b);
  Tensor64 o2 = backbone_forward(img, b);
  CHECK(o1.data == o2.data);
  CHECK(o1.shape == std::vector<int>{5, 8});
}
