#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "psyn/autograd.hpp"
#include "psyn/checkpoint.hpp"
#include "psyn/optim.hpp"
#include "psyn/rng.hpp"
#include "psyn/tensor.hpp"
#include "../support/gradcheck.hpp"

using namespace psyn;
using psyn::testing::random_tensor;

namespace {

// Direct quadruple-loop cross-correlation; deliberately naive.
std::vector<double> naive_conv2d(const Tensor& x, const Tensor& k, int stride, int pad) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto f = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const auto oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  auto xv = x.values();
  auto kv = k.values();
  std::vector<double> out(static_cast<std::size_t>(n * f * oh * ow), 0.0);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < f; ++o)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          double acc = 0.0;
          for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t i = 0; i < kh; ++i)
              for (std::int64_t j = 0; j < kw; ++j) {
                const auto iy = y * stride - pad + i, ix = xx * stride - pad + j;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += xv[((b * c + ch) * h + iy) * w + ix] * kv[((o * c + ch) * kh + i) * kw + j];
              }
          out[((b * f + o) * oh + y) * ow + xx] = acc;
        }
  return out;
}

// Scatter-accumulate transposed convolution oracle.
std::vector<double> naive_conv_transpose(const Tensor& x, const Tensor& k, int stride, int pad) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto f = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const auto oh = (h - 1) * stride - 2 * pad + kh, ow = (w - 1) * stride - 2 * pad + kw;
  auto xv = x.values();
  auto kv = k.values();
  std::vector<double> out(static_cast<std::size_t>(n * f * oh * ow), 0.0);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t xx = 0; xx < w; ++xx)
          for (std::int64_t o = 0; o < f; ++o)
            for (std::int64_t i = 0; i < kh; ++i)
              for (std::int64_t j = 0; j < kw; ++j) {
                const auto oy = y * stride - pad + i, ox = xx * stride - pad + j;
                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                out[((b * f + o) * oh + oy) * ow + ox] +=
                    xv[((b * c + ch) * h + y) * w + xx] * kv[((ch * f + o) * kh + i) * kw + j];
              }
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("conv2d matches hand-summed 3x3 example") {
  Tensor x = Tensor::from_values({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}, DType::f64);
  Tensor k = Tensor::full({1, 1, 2, 2}, 1.0, DType::f64);
  Tensor y = conv2d(x, k, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  // frozen from naive_conv2d
  CHECK(naive_conv2d(x, k, 1, 0) == std::vector<double>{12, 16, 24, 28});
  CHECK(y.values() == std::vector<double>{12, 16, 24, 28});
}

TEST_CASE("conv2d identity kernel and halving arithmetic") {
  Rng rng(3);
  Tensor x = random_tensor({2, 1, 5, 4}, rng);
  Tensor id = Tensor::full({1, 1, 1, 1}, 1.0, DType::f64);
  CHECK(conv2d(x, id, 1, 0).values() == x.values());

  Tensor x4 = random_tensor({1, 1, 4, 4}, rng);
  Tensor k4 = random_tensor({1, 1, 4, 4}, rng);
  CHECK(conv2d(x4, k4, 2, 1).shape() == Shape{1, 1, 2, 2});
}

TEST_CASE("conv2d agrees with naive oracle on random strided/padded shapes") {
  Rng rng(11);
  for (int trial = 0; trial < 6; ++trial) {
    const int stride = 1 + trial % 2, pad = trial % 3;
    Tensor x = random_tensor({2, 3, 7, 6}, rng);
    Tensor k = random_tensor({4, 3, 3, 4}, rng);
    auto got = conv2d(x, k, stride, pad).values();
    auto want = naive_conv2d(x, k, stride, pad);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d rejects channel mismatch with a shape diagnostic") {
  Tensor x = Tensor::zeros({1, 3, 4, 4}, DType::f64);
  Tensor k = Tensor::zeros({2, 2, 3, 3}, DType::f64);
  try {
    conv2d(x, k, 1, 0);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("[1,3,4,4]") != std::string::npos);
    CHECK(std::string(e.what()).find("[2,2,3,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 2, 2}, DType::f64),
                         Tensor::zeros({1, 1, 3, 3}, DType::f64), 1, 0),
                  ShapeError);
}

TEST_CASE("conv_transpose2d scatter example and doubling arithmetic") {
  Tensor x = Tensor::from_values({1, 1, 1, 1}, {2.0}, DType::f64);
  Tensor k = Tensor::full({1, 1, 2, 2}, 1.0, DType::f64);
  Tensor y = conv_transpose2d(x, k, 2, 0);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(naive_conv_transpose(x, k, 2, 0) == std::vector<double>{2, 2, 2, 2});
  CHECK(y.values() == std::vector<double>{2, 2, 2, 2});

  Rng rng(5);
  Tensor x8 = random_tensor({1, 2, 8, 8}, rng);
  Tensor k8 = random_tensor({2, 3, 4, 4}, rng);
  Tensor y8 = conv_transpose2d(x8, k8, 2, 1);
  CHECK(y8.shape() == Shape{1, 3, 16, 16});
  auto want = naive_conv_transpose(x8, k8, 2, 1);
  auto got = y8.values();
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  CHECK_THROWS_AS(conv_transpose2d(x8, Tensor::zeros({3, 3, 4, 4}, DType::f64), 2, 1), ShapeError);
}

TEST_CASE("conv2d and conv_transpose2d are adjoint") {
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    const int stride = 1 + trial % 2, pad = trial % 2;
    Tensor a = random_tensor({2, 3, 5, 5}, rng);
    Tensor k = random_tensor({4, 3, 3, 3}, rng);
    Tensor ya = conv2d(a, k, stride, pad);
    Tensor b = random_tensor(ya.shape(), rng);
    Tensor tb = conv_transpose2d(b, k, stride, pad, 5, 5);
    const double lhs = dot(ya.values(), b.values());
    const double rhs = dot(a.values(), tb.values());
    CHECK(std::abs(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("batch_norm train/eval behaviour") {
  SUBCASE("two values per channel normalize to -1, 1") {
    Tensor x = Tensor::from_values({2, 1, 1, 1}, {1.0, 3.0}, DType::f64);
    RunningStats st;
    Tensor y = batch_norm(x, Tensor::full({1}, 1.0, DType::f64), Tensor::zeros({1}, DType::f64),
                          0.0, Mode::train, st);
    CHECK(y.values() == std::vector<double>{-1.0, 1.0});
    // momentum 0.1, unbiased variance 2
    CHECK(st.mean.item() == doctest::Approx(0.2));
    CHECK(st.var.item() == doctest::Approx(0.9 + 0.1 * 2.0));
  }
  SUBCASE("standardized input passes through") {
    Tensor x = Tensor::from_values({4, 1, 1, 1}, {-1.0, 1.0, -1.0, 1.0}, DType::f64);
    RunningStats st;
    Tensor y = batch_norm(x, Tensor::full({1}, 1.0, DType::f64), Tensor::zeros({1}, DType::f64),
                          0.0, Mode::train, st);
    CHECK(y.values() == x.values());
  }
  SUBCASE("output moments follow gamma and beta") {
    Rng rng(2);
    Tensor x = random_tensor({3, 2, 4, 5}, rng, -3.0, 7.0);
    Tensor gamma = Tensor::from_values({2}, {1.5, 0.5}, DType::f64);
    Tensor beta = Tensor::from_values({2}, {-2.0, 4.0}, DType::f64);
    RunningStats st;
    Tensor y = batch_norm(x, gamma, beta, 0.0, Mode::train, st);
    auto v = y.values();
    for (int c = 0; c < 2; ++c) {
      double s = 0, s2 = 0;
      int m = 0;
      for (int n = 0; n < 3; ++n)
        for (int i = 0; i < 20; ++i) {
          const double val = v[(n * 2 + c) * 20 + i];
          s += val;
          s2 += val * val;
          ++m;
        }
      const double mu = s / m, var = s2 / m - mu * mu;
      CHECK(mu == doctest::Approx(beta.at(c)).epsilon(1e-10));
      CHECK(var == doctest::Approx(gamma.at(c) * gamma.at(c)).epsilon(1e-9));
    }
  }
  SUBCASE("eval uses running statistics") {
    Tensor x = Tensor::from_values({1, 1, 1, 2}, {3.0, 5.0}, DType::f64);
    RunningStats st{Tensor::from_values({1}, {1.0}, DType::f64),
                    Tensor::from_values({1}, {4.0}, DType::f64)};
    Tensor y = batch_norm(x, Tensor::full({1}, 1.0, DType::f64), Tensor::zeros({1}, DType::f64),
                          0.0, Mode::eval, st);
    CHECK(y.values() == std::vector<double>{1.0, 2.0});
  }
  SUBCASE("single value per channel is rejected in train mode") {
    RunningStats st;
    CHECK_THROWS_AS(batch_norm(Tensor::zeros({1, 2, 1, 1}, DType::f64),
                               Tensor::full({2}, 1.0, DType::f64), Tensor::zeros({2}, DType::f64),
                               1e-5, Mode::train, st),
                    ShapeError);
  }
}

TEST_CASE("activations") {
  Tensor x = Tensor::from_values({3}, {-1.0, 3.0, -5.0}, DType::f64);
  auto lr = apply_activation(Activation::LeakyRelu(0.2), x).values();
  CHECK(lr[0] == doctest::Approx(-0.2));
  CHECK(lr[1] == 3.0);
  CHECK(apply_activation(Activation::Relu(), x).values()[2] == 0.0);
  CHECK(apply_activation(Activation::Tanh(), Tensor::scalar(0.0, DType::f64)).item() == 0.0);
  CHECK(apply_activation(Activation::Sigmoid(), Tensor::scalar(0.0, DType::f64)).item() == 0.5);
}

TEST_CASE("dropout") {
  Rng rng(9);
  Tensor x = random_tensor({10}, rng);
  CHECK(dropout(x, 0.0, Mode::train, rng).values() == x.values());
  CHECK(dropout(x, 0.0, Mode::eval, rng).values() == x.values());
  CHECK(dropout(x, 0.5, Mode::eval, rng).values() == x.values());
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::train, rng), std::invalid_argument);

  const std::int64_t n = 100000;
  Tensor ones = Tensor::full({n}, 1.0, DType::f64);
  auto y = dropout(ones, 0.5, Mode::train, rng).values();
  double survivors = 0, total = 0;
  for (double v : y) {
    survivors += v != 0.0;
    total += v;
  }
  CHECK(std::abs(survivors / n - 0.5) < 0.01);
  CHECK(std::abs(total / n - 1.0) < 0.02);
}

TEST_CASE("lerp") {
  Tensor a = Tensor::scalar(2.0, DType::f64);
  Tensor b = Tensor::scalar(4.0, DType::f64);
  CHECK(lerp(a, b, 1.0).item() == 2.0);
  CHECK(lerp(a, b, 0.0).item() == 4.0);
  CHECK(lerp(a, b, 0.5).item() == 3.0);
  CHECK_THROWS_AS(lerp(a, Tensor::zeros({2}, DType::f64), 0.5), ShapeError);
}

TEST_CASE("adam_step") {
  SUBCASE("first step moves by lr against the gradient sign") {
    ParamSet ps;
    ps.add("w", Tensor::scalar(0.0, DType::f64));
    AdamConfig cfg{2e-4, 0.5, 0.999, 1e-8};
    adam_step(ps, {Tensor::scalar(1.0, DType::f64)}, cfg);
    // mhat = 1, vhat = 1 -> -lr * 1/(1+1e-8)
    CHECK(std::abs(ps.at("w").item() - (-2e-4)) < 1e-9);
    CHECK(ps.state("w").step == 1);
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamSet ps;
    Rng rng(1);
    ps.add("a", random_tensor({3, 2}, rng));
    auto before = ps.at("a").values();
    adam_step(ps, {Tensor::zeros({3, 2}, DType::f64)}, AdamConfig{});
    CHECK(ps.at("a").values() == before);
  }
  SUBCASE("deterministic") {
    auto run = [] {
      ParamSet ps;
      Rng rng(77);
      ps.add("a", random_tensor({5}, rng, -1, 1, DType::f32));
      for (int i = 0; i < 10; ++i) adam_step(ps, {random_tensor({5}, rng, -1, 1, DType::f32)}, AdamConfig{});
      return ps.fingerprint();
    };
    CHECK(run() == run());
  }
  SUBCASE("shape mismatch rejected") {
    ParamSet ps;
    ps.add("a", Tensor::zeros({2}, DType::f64));
    CHECK_THROWS_AS(adam_step(ps, {Tensor::zeros({3}, DType::f64)}, AdamConfig{}), ShapeError);
    CHECK_THROWS_AS(ps.add("a", Tensor::zeros({2}, DType::f64)), std::invalid_argument);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(4);
  ParamSet ps;
  ps.add("gen/enc1/kernel", random_tensor({4, 3, 4, 4}, rng, -1, 1, DType::f32));
  ps.add("gen/enc1/bias", random_tensor({4}, rng, -1, 1, DType::f64));
  adam_step(ps, {random_tensor({4, 3, 4, 4}, rng, -1, 1, DType::f32), random_tensor({4}, rng)},
            AdamConfig{});
  Checkpoint ck;
  ck.header = "image_size=32\n";
  store_params(ck, "gen", ps);
  ck.put("extra/nan", Tensor::from_values({2}, {std::nan(""), -0.0}, DType::f64));

  auto bytes = encode_checkpoint(ck);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PSYN");
  Checkpoint back = decode_checkpoint(bytes);
  CHECK(encode_checkpoint(back) == bytes);
  CHECK(back.header == ck.header);

  ParamSet fresh;
  fresh.add("gen/enc1/kernel", Tensor::zeros({4, 3, 4, 4}, DType::f32));
  fresh.add("gen/enc1/bias", Tensor::zeros({4}, DType::f64));
  load_params(back, "gen", fresh);
  CHECK(fresh.fingerprint() == ps.fingerprint());
  CHECK(fresh.state("gen/enc1/bias").step == 1);

  auto file = std::filesystem::temp_directory_path() / "psyn_ckpt_test.psyn";
  write_checkpoint(file, ck);
  CHECK(encode_checkpoint(read_checkpoint(file)) == bytes);
  std::filesystem::remove(file);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(truncated), CheckpointError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
}
