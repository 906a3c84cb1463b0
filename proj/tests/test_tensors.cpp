#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "auformer/conv.hpp"
#include "auformer/rng.hpp"
#include "auformer/serialize.hpp"
#include "auformer/tensor.hpp"

using namespace auf;

namespace {

// Independent reference conv: plain quadruple loop, no shared code with
// the library kernel.
Tensor64 conv_reference(const Tensor64& in, const Tensor64& w, const Tensor64& b, int dil,
                        int pad) {
  const int ci = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const int co = w.dim(0), k = w.dim(2);
  Tensor64 out = Tensor64::zeros({co, h, wd});
  for (int oc = 0; oc < co; ++oc)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < wd; ++x) {
        double acc = b.at(static_cast<size_t>(oc));
        for (int ic = 0; ic < ci; ++ic)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y - pad + ky * dil, ix = x - pad + kx * dil;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += w.at(oc, ic, ky, kx) * in.at(ic, iy, ix);
            }
        out.at(oc, y, x) = acc;
      }
  return out;
}

Tensor64 random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor64 t = Tensor64::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.next_normal();
  return t;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("conv2d 1x1 identity kernel passes input through") {
  Conv2dParams<double> p;
  p.weight.set(Tensor64({1, 1, 1, 1}, {1.0}));
  p.bias.set(Tensor64::zeros({1}));
  Rng rng(7);
  Tensor64 in = random_tensor({1, 5, 5}, rng);
  Tensor64 out = conv2d(in, p);
  for (size_t i = 0; i < in.numel(); ++i) CHECK(out.data[i] == in.data[i]);
}

TEST_CASE("conv2d dilation 3 impulse responds only at multiples of 3") {
  Conv2dParams<double> p = make_conv<double>(1, 1, 3, 3, InitScheme::kZeros, 0.0, 0);
  p.weight.v.fill(1.0);
  Tensor64 in = Tensor64::zeros({1, 9, 9});
  in.at(0, 4, 4) = 1.0;
  Tensor64 out = conv2d(in, p);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x) {
      const bool hit = (std::abs(y - 4) == 0 || std::abs(y - 4) == 3) &&
                       (std::abs(x - 4) == 0 || std::abs(x - 4) == 3);
      CHECK(out.at(0, y, x) == (hit ? 1.0 : 0.0));
    }
}

TEST_CASE("conv2d all-ones 3x3 on all-ones 5x5 counts the in-bounds taps") {
  Conv2dParams<double> p = make_conv<double>(1, 1, 3, 1, InitScheme::kZeros, 0.0, 0);
  p.weight.v.fill(1.0);
  Tensor64 in = Tensor64::zeros({1, 5, 5});
  in.fill(1.0);
  Tensor64 out = conv2d(in, p);
  CHECK(out.at(0, 2, 2) == 9.0);
  CHECK(out.at(0, 0, 0) == 4.0);
  CHECK(out.at(0, 0, 2) == 6.0);
}

TEST_CASE("conv2d matches the reference loop on random instances") {
  Rng rng(123);
  for (int trial = 0; trial < 20; ++trial) {
    const int ci = 1 + static_cast<int>(rng.next_below(3));
    const int co = 1 + static_cast<int>(rng.next_below(3));
    const int k = rng.next_double() < 0.5 ? 1 : 3;
    const int dil = k == 1 ? 1 : 1 + static_cast<int>(rng.next_below(3));
    const int side = 4 + static_cast<int>(rng.next_below(5));
    Conv2dParams<double> p = make_conv<double>(co, ci, k, dil, InitScheme::kZeros, 0.0, 0);
    for (auto& v : p.weight.v.data) v = rng.next_normal();
    for (auto& v : p.bias.v.data) v = rng.next_normal();
    Tensor64 in = random_tensor({ci, side, side}, rng);
    Tensor64 got = conv2d(in, p);
    Tensor64 want = conv_reference(in, p.weight.v, p.bias.v, dil, p.padding);
    for (size_t i = 0; i < got.numel(); ++i)
      CHECK(std::abs(got.data[i] - want.data[i]) < 1e-10);
  }
}

TEST_CASE("conv2d rejects mismatched inputs") {
  Conv2dParams<double> p = make_conv<double>(2, 3, 3, 1, InitScheme::kZeros, 0.0, 0);
  CHECK_THROWS_AS(conv2d(Tensor64::zeros({2, 4, 4}), p), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor64::zeros({3, 4}), p), ShapeError);
}

TEST_CASE("softmax of a constant vector is uniform") {
  Tensor64 x = Tensor64::zeros({1, 5});
  x.fill(3.7);
  Tensor64 s = softmax(x, 1);
  for (int i = 0; i < 5; ++i) CHECK(s.at(0, i) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("softmax of [0, ln 2] is [1/3, 2/3]") {
  Tensor64 x({1, 2}, {0.0, std::log(2.0)});
  Tensor64 s = softmax(x, 1);
  CHECK(s.at(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(s.at(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax is shift invariant and rows sum to 1") {
  Rng rng(5);
  Tensor64 x = random_tensor({4, 7}, rng);
  Tensor64 shifted = x;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 7; ++j) shifted.at(i, j) += 11.25;
  Tensor64 a = softmax(x, 1), b = softmax(shifted, 1);
  for (int i = 0; i < 4; ++i) {
    double sum = 0.0;
    for (int j = 0; j < 7; ++j) {
      sum += a.at(i, j);
      CHECK(a.at(i, j) == doctest::Approx(b.at(i, j)).epsilon(1e-12));
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  Tensor32 xf = x.cast<float>();
  Tensor32 af = softmax(xf, 1);
  for (int i = 0; i < 4; ++i) {
    float sum = 0.0f;
    for (int j = 0; j < 7; ++j) sum += af.at(i, j);
    CHECK(std::abs(sum - 1.0f) < 1e-6f);
  }
}

TEST_CASE("token-grid round trips") {
  Rng rng(9);
  Tensor64 tokens = random_tensor({65, 64}, rng);
  Tensor64 cls, grid;
  tokens_to_grid(tokens, cls, grid);
  CHECK(cls.shape == std::vector<int>{1, 1, 64});
  CHECK(grid.shape == std::vector<int>{8, 8, 64});
  Tensor64 back = grid_to_tokens(cls, grid);
  CHECK(back.data == tokens.data);

  Tensor64 t17 = random_tensor({17, 3}, rng);
  tokens_to_grid(t17, cls, grid);
  CHECK(grid.shape == std::vector<int>{4, 4, 3});
  CHECK(grid_to_tokens(cls, grid).data == t17.data);

  // 10 tokens = 9 patches = 3x3, valid; 11 tokens = 10 patches, not square.
  CHECK_NOTHROW(tokens_to_grid(random_tensor({10, 3}, rng), cls, grid));
  CHECK_THROWS_AS(tokens_to_grid(random_tensor({11, 3}, rng), cls, grid), ConfigError);
}

TEST_CASE("hwc/chw transposes round trip") {
  Rng rng(2);
  Tensor64 hwc = random_tensor({5, 6, 3}, rng);
  Tensor64 chw = hwc_to_chw(hwc);
  CHECK(chw.shape == std::vector<int>{3, 5, 6});
  CHECK(chw_to_hwc(chw).data == hwc.data);
}

TEST_CASE("scalar activations hit known values") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(gelu(0.0) == 0.0);
  CHECK(sigmoid(std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-12));
  // gelu_grad against a central difference
  for (double x : {-2.0, -0.5, 0.0, 0.3, 1.7}) {
    const double h = 1e-6;
    const double fd = (gelu(x + h) - gelu(x - h)) / (2 * h);
    CHECK(gelu_grad(x) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("seeded init is deterministic and respects the scheme") {
  Tensor64 z = seeded_init<double>({3, 4}, InitScheme::kZeros, 0.02, 42);
  for (double v : z.data) CHECK(v == 0.0);
  Tensor64 a = seeded_init<double>({64, 64}, InitScheme::kTruncNormal, 0.02, 42);
  Tensor64 b = seeded_init<double>({64, 64}, InitScheme::kTruncNormal, 0.02, 42);
  CHECK(a.data == b.data);
  Tensor64 c = seeded_init<double>({64, 64}, InitScheme::kTruncNormal, 0.02, 43);
  CHECK(a.data != c.data);
  double spread = 0.0;
  for (double v : a.data) {
    CHECK(std::abs(v) <= 0.04);
    spread = std::max(spread, std::abs(v));
  }
  CHECK(spread > 0.02);  // not degenerate
}

TEST_CASE("rng streams are deterministic and distinct") {
  Rng a(1), b(1), c(2);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(a.next_u64() != c.next_u64());
  CHECK(Rng::derive(1, 2) != Rng::derive(1, 3));
  CHECK(Rng::derive(1, 2) != Rng::derive(2, 2));
  Rng d(99);
  for (int i = 0; i < 1000; ++i) {
    const double u = d.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(d.next_below(7) < 7);
  }
}

TEST_CASE("weight container round-trips byte-identically") {
  Rng rng(31);
  NamedTensors ts;
  ts.emplace_back("alpha", random_tensor({2, 3}, rng).cast<float>());
  ts.emplace_back("beta", random_tensor({4}, rng).cast<float>());
  ts.emplace_back("gamma.weight", random_tensor({2, 2, 3, 3}, rng).cast<float>());
  const std::string p1 = "/tmp/auf_t1.aufw", p2 = "/tmp/auf_t2.aufw";
  save_tensors(p1, ts);
  NamedTensors back = load_tensors(p1);
  REQUIRE(back.size() == ts.size());
  for (size_t i = 0; i < ts.size(); ++i) {
    CHECK(back[i].first == ts[i].first);
    CHECK(back[i].second.shape == ts[i].second.shape);
    CHECK(back[i].second.data == ts[i].second.data);
  }
  save_tensors(p2, back);
  CHECK(slurp(p1) == slurp(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("weight container rejects corrupted input") {
  Rng rng(32);
  NamedTensors ts;
  ts.emplace_back("w", random_tensor({3, 3}, rng).cast<float>());
  const std::string path = "/tmp/auf_t3.aufw";
  save_tensors(path, ts);
  std::string bytes = slurp(path);

  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::ofstream(path, std::ios::binary) << bad;
    CHECK_THROWS_AS(load_tensors(path), FormatError);
  }
  {
    std::string bad = bytes.substr(0, bytes.size() - 5);
    std::ofstream(path, std::ios::binary) << bad;
    CHECK_THROWS_AS(load_tensors(path), FormatError);
  }
  CHECK_THROWS_AS(load_tensors("/tmp/auf_missing.aufw"), IoError);
  std::remove(path.c_str());
}

TEST_CASE("sample tensor file round-trips byte-identically") {
  Rng rng(33);
  Tensor32 t = random_tensor({1, 8, 8}, rng).cast<float>();
  const std::string p1 = "/tmp/auf_s1.autd", p2 = "/tmp/auf_s2.autd";
  write_sample_tensor(p1, t);
  Tensor32 back = read_sample_tensor(p1);
  CHECK(back.shape == t.shape);
  CHECK(back.data == t.data);
  write_sample_tensor(p2, back);
  CHECK(slurp(p1) == slurp(p2));

  std::string bytes = slurp(p1);
  bytes[1] = '?';
  std::ofstream(p1, std::ios::binary) << bytes;
  CHECK_THROWS_AS(read_sample_tensor(p1), FormatError);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}
