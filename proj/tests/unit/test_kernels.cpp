#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "siamfc/error.hpp"
#include "siamfc/kernels.hpp"
#include "test_util.hpp"

using namespace siamfc;
using namespace testutil;

namespace {

// Independent loop-nest oracle for grouped VALID convolution.
Tensor conv_oracle(const Tensor& x, const Tensor& wt, const std::vector<float>& bias,
                   const ConvSpec& s) {
  const int ho = (x.h() - s.kernel_h) / s.stride + 1;
  const int wo = (x.w() - s.kernel_w) / s.stride + 1;
  const int in_g = x.c() / s.groups, out_g = s.out_channels / s.groups;
  Tensor y({x.n(), s.out_channels, ho, wo});
  for (int b = 0; b < x.n(); ++b)
    for (int oc = 0; oc < s.out_channels; ++oc) {
      const int g = oc / out_g;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[oc];
          for (int ic = 0; ic < in_g; ++ic)
            for (int ky = 0; ky < s.kernel_h; ++ky)
              for (int kx = 0; kx < s.kernel_w; ++kx)
                acc += static_cast<double>(wt.at(oc, ic, ky, kx)) *
                       x.at(b, g * in_g + ic, oy * s.stride + ky, ox * s.stride + kx);
          y.at(b, oc, oy, ox) = static_cast<float>(acc);
        }
    }
  return y;
}

struct ConvCase {
  Tensor x, w;
  std::vector<float> bias;
  ConvSpec spec;
};

ConvCase random_conv(std::mt19937_64& rng, int max_extra = 8) {
  ConvCase c;
  c.spec.groups = rand_int(rng, 1, 3);
  const int in_g = rand_int(rng, 1, 3), out_g = rand_int(rng, 1, 3);
  c.spec.out_channels = out_g * c.spec.groups;
  c.spec.kernel_h = rand_int(rng, 1, 5);
  c.spec.kernel_w = rand_int(rng, 1, 5);
  c.spec.stride = rand_int(rng, 1, 3);
  const int h = c.spec.kernel_h + rand_int(rng, 0, max_extra);
  const int w = c.spec.kernel_w + rand_int(rng, 0, max_extra);
  c.x = random_tensor({rand_int(rng, 1, 2), in_g * c.spec.groups, h, w}, rng);
  c.w = random_tensor({c.spec.out_channels, in_g, c.spec.kernel_h, c.spec.kernel_w}, rng);
  c.bias.resize(c.spec.out_channels);
  for (float& b : c.bias) b = std::uniform_real_distribution<float>(-1, 1)(rng);
  return c;
}

// Values spread at least 0.01 apart so max-pool argmax is stable under eps.
Tensor distinct_tensor(Shape s, std::mt19937_64& rng) {
  std::vector<float> v(s.numel());
  std::iota(v.begin(), v.end(), 0.0f);
  for (float& x : v) x *= 0.01f;
  std::shuffle(v.begin(), v.end(), rng);
  return Tensor(s, v);
}

}  // namespace

TEST_CASE("VALID extent formula") {
  CHECK(valid_extent(127, 11, 2) == 59);
  CHECK(valid_extent(255, 11, 2) == 123);
  CHECK(valid_extent(10, 11, 1) == 0);
}

TEST_CASE("conv2d fast and direct paths match the loop oracle") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 60; ++trial) {
    const ConvCase c = random_conv(rng);
    const Tensor want = conv_oracle(c.x, c.w, c.bias, c.spec);
    const Tensor fast = conv2d(c.x, c.w, c.bias, c.spec);
    const Tensor direct = conv2d_direct(c.x, c.w, c.bias, c.spec);
    REQUIRE(fast.shape() == want.shape());
    CHECK(max_abs_diff(fast, want) <= 1e-4f);
    CHECK(max_abs_diff(direct, want) <= 1e-4f);
  }
}

TEST_CASE("conv2d group g reads only input group g") {
  std::mt19937_64 rng(2);
  ConvSpec spec{3, 3, 1, 2, 4};
  Tensor x = random_tensor({1, 4, 6, 6}, rng);
  const Tensor w = random_tensor({4, 2, 3, 3}, rng);
  const Tensor before = conv2d(x, w, {}, spec);
  for (int y = 0; y < 6; ++y)
    for (int xx = 0; xx < 6; ++xx) x.at(0, 3, y, xx) += 5.0f;  // perturb group 1 only
  const Tensor after = conv2d(x, w, {}, spec);
  for (int oc = 0; oc < 2; ++oc)
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 4; ++xx) CHECK(after.at(0, oc, y, xx) == before.at(0, oc, y, xx));
  CHECK(std::abs(after.at(0, 2, 0, 0) - before.at(0, 2, 0, 0)) > 1e-3f);
}

TEST_CASE("conv2d shape errors name the offending dimension") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({1, 3, 8, 8}, rng);
  SUBCASE("channel mismatch") {
    const Tensor w = random_tensor({4, 2, 3, 3}, rng);
    try {
      conv2d(x, w, {}, {3, 3, 1, 1, 4});
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("channel") != std::string::npos);
    }
  }
  SUBCASE("kernel larger than input") {
    const Tensor w = random_tensor({4, 3, 9, 9}, rng);
    CHECK_THROWS_AS(conv2d(x, w, {}, {9, 9, 1, 1, 4}), ShapeError);
  }
}

TEST_CASE("conv2d with stride k commutes with translation by k on the interior") {
  std::mt19937_64 rng(4);
  const int k = 2;
  const Tensor x = random_tensor({1, 2, 20, 20}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const ConvSpec spec{3, 3, k, 1, 3};
  const Tensor y = conv2d(x, w, {}, spec);
  for (int tau = 1; tau <= 2; ++tau) {
    Tensor shifted({1, 2, 20 - k * tau, 20});
    for (int c = 0; c < 2; ++c)
      for (int r = 0; r < shifted.h(); ++r)
        for (int q = 0; q < 20; ++q) shifted.at(0, c, r, q) = x.at(0, c, r + k * tau, q);
    const Tensor ys = conv2d(shifted, w, {}, spec);
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < ys.h(); ++r)
        for (int q = 0; q < ys.w(); ++q) CHECK(ys.at(0, c, r, q) == doctest::Approx(y.at(0, c, r + tau, q)).epsilon(1e-5));
  }
}

TEST_CASE("maxpool2d equals window enumeration") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const int size = rand_int(rng, 1, 4), stride = rand_int(rng, 1, 3);
    const Tensor x = random_tensor({2, 2, size + rand_int(rng, 0, 7), size + rand_int(rng, 0, 7)}, rng);
    const Tensor y = maxpool2d(x, size, stride);
    REQUIRE(y.h() == valid_extent(x.h(), size, stride));
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c)
        for (int oy = 0; oy < y.h(); ++oy)
          for (int ox = 0; ox < y.w(); ++ox) {
            float m = -1e30f;
            for (int dy = 0; dy < size; ++dy)
              for (int dx = 0; dx < size; ++dx) m = std::max(m, x.at(b, c, oy * stride + dy, ox * stride + dx));
            CHECK(y.at(b, c, oy, ox) == m);
          }
  }
}

TEST_CASE("maxpool2d examples and errors") {
  const Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 9, 6, 7, 8, 5});
  CHECK(maxpool2d(x, 3, 2).at(0, 0, 0, 0) == 9.0f);
  CHECK_THROWS_AS(maxpool2d(x, 4, 1), ShapeError);
}

TEST_CASE("maxpool2d backward routes ties to the first occurrence") {
  const Tensor x({1, 1, 2, 2}, {3, 3, 3, 3});
  const Tensor g({1, 1, 1, 1}, {1.0f});
  const Tensor dx = maxpool2d_backward(x, 2, 1, g);
  CHECK(dx.at(0, 0, 0, 0) == 1.0f);
  CHECK(dx.at(0, 0, 0, 1) == 0.0f);
  CHECK(dx.at(0, 0, 1, 0) == 0.0f);
  CHECK(dx.at(0, 0, 1, 1) == 0.0f);
}

TEST_CASE("relu") {
  const Tensor x({1, 1, 1, 4}, {-2.0f, -0.0f, 0.5f, 3.0f});
  const Tensor y = relu(x);
  CHECK(y.at(0, 0, 0, 0) == 0.0f);
  CHECK(y.at(0, 0, 0, 2) == 0.5f);
  CHECK(y.at(0, 0, 0, 3) == 3.0f);
}

TEST_CASE("batchnorm train mode matches a two-pass oracle and updates running stats") {
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({3, 4, 5, 6}, rng, -2.0f, 3.0f);
  BatchNormParams p = BatchNormParams::identity(4);
  for (int c = 0; c < 4; ++c) {
    p.gamma[c] = 0.5f + c;
    p.beta[c] = -1.0f + c;
  }
  BatchNormCache cache;
  const Tensor y = batchnorm(x, p, Mode::Train, &cache);
  const int m = 3 * 5 * 6;
  for (int c = 0; c < 4; ++c) {
    double mean = 0.0;
    for (int b = 0; b < 3; ++b)
      for (int i = 0; i < 30; ++i) mean += x.plane(b, c)[i];
    mean /= m;
    double var = 0.0;
    for (int b = 0; b < 3; ++b)
      for (int i = 0; i < 30; ++i) var += (x.plane(b, c)[i] - mean) * (x.plane(b, c)[i] - mean);
    var /= m;
    for (int b = 0; b < 3; ++b)
      for (int i = 0; i < 30; ++i) {
        const double want = (0.5 + c) * (x.plane(b, c)[i] - mean) / std::sqrt(var + 1e-5) + (-1.0 + c);
        CHECK(y.plane(b, c)[i] == doctest::Approx(want).epsilon(1e-4));
      }
    CHECK(p.running_mean[c] == doctest::Approx(0.1 * mean).epsilon(1e-5));
    CHECK(p.running_var[c] == doctest::Approx(0.9 + 0.1 * var * m / (m - 1)).epsilon(1e-5));
  }
}

TEST_CASE("batchnorm infer mode uses running stats and leaves them untouched") {
  BatchNormParams p = BatchNormParams::identity(1);
  p.running_mean[0] = 2.0f;
  p.running_var[0] = 4.0f;
  const Tensor x({1, 1, 1, 2}, {2.0f, 6.0f});
  const Tensor y = batchnorm(x, p, Mode::Infer);
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(0.0));
  CHECK(y.at(0, 0, 0, 1) == doctest::Approx(4.0 / std::sqrt(4.0 + 1e-5)));
  CHECK(p.running_mean[0] == 2.0f);
  CHECK(p.running_var[0] == 4.0f);
}

TEST_CASE("batchnorm on a constant channel stays finite") {
  BatchNormParams p = BatchNormParams::identity(1);
  const Tensor x({2, 1, 2, 2}, 7.0f);
  const Tensor y = batchnorm(x, p, Mode::Train);
  CHECK(all_finite(y));
  CHECK(max_abs_diff(y, Tensor(y.shape(), 0.0f)) == 0.0f);
}

TEST_CASE("batchnorm train mode needs two values per channel") {
  BatchNormParams p = BatchNormParams::identity(1);
  CHECK_THROWS_AS(batchnorm(Tensor({1, 1, 1, 1}, 1.0f), p, Mode::Train), ShapeError);
}

TEST_CASE("xcorr equals per-sub-window inner products") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int c = rand_int(rng, 1, 5), hz = rand_int(rng, 1, 6), wz = rand_int(rng, 1, 6);
    const int n = rand_int(rng, 1, 3);
    const Tensor z = random_tensor({rand_int(rng, 0, 1) ? n : 1, c, hz, wz}, rng);
    const Tensor x = random_tensor({n, c, hz + rand_int(rng, 0, 8), wz + rand_int(rng, 0, 8)}, rng);
    const Tensor y = xcorr(z, x);
    REQUIRE(y.shape() == Shape{n, 1, x.h() - hz + 1, x.w() - wz + 1});
    float worst = 0.0f;
    for (int b = 0; b < n; ++b) {
      const int zb = z.n() == 1 ? 0 : b;
      for (int i = 0; i < y.h(); ++i)
        for (int j = 0; j < y.w(); ++j) {
          double s = 0.0;
          for (int ch = 0; ch < c; ++ch)
            for (int u = 0; u < hz; ++u)
              for (int v = 0; v < wz; ++v) s += static_cast<double>(z.at(zb, ch, u, v)) * x.at(b, ch, i + u, j + v);
          worst = std::max(worst, static_cast<float>(std::abs(s - y.at(b, 0, i, j))));
        }
    }
    CHECK(worst <= 1e-4f);
  }
}

TEST_CASE("xcorr of equal-size inputs is a symmetric scalar") {
  std::mt19937_64 rng(8);
  const Tensor a = random_tensor({1, 3, 4, 4}, rng), b = random_tensor({1, 3, 4, 4}, rng);
  const Tensor ab = xcorr(a, b), ba = xcorr(b, a);
  REQUIRE(ab.shape() == Shape{1, 1, 1, 1});
  CHECK(ab.at(0, 0, 0, 0) == ba.at(0, 0, 0, 0));
}

TEST_CASE("xcorr errors") {
  std::mt19937_64 rng(9);
  CHECK_THROWS_AS(xcorr(random_tensor({1, 2, 3, 3}, rng), random_tensor({1, 3, 5, 5}, rng)), ShapeError);
  CHECK_THROWS_AS(xcorr(random_tensor({1, 2, 6, 3}, rng), random_tensor({1, 2, 5, 5}, rng)), ShapeError);
}

// Gradient checks: loss = <G, f(params)> for a random projection G.

TEST_CASE("conv2d gradients match central differences") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    ConvCase c = random_conv(rng, 5);
    const Tensor y = conv2d(c.x, c.w, c.bias, c.spec);
    const Tensor g = random_tensor(y.shape(), rng);
    auto loss = [&] { return dot(conv2d(c.x, c.w, c.bias, c.spec).values(), g.values()); };
    const ConvGrads an = conv2d_backward(c.x, c.w, c.spec, g);
    CHECK(rel_error(an.input.values(), numeric_grad(c.x.values(), loss)) <= 1e-2);
    CHECK(rel_error(an.weights.values(), numeric_grad(c.w.values(), loss)) <= 1e-2);
    CHECK(rel_error(an.bias, numeric_grad(c.bias, loss)) <= 1e-2);
  }
}

TEST_CASE("maxpool2d gradients match central differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int size = rand_int(rng, 2, 3), stride = rand_int(rng, 1, 2);
    Tensor x = distinct_tensor({1, 2, size + rand_int(rng, 0, 5), size + rand_int(rng, 0, 5)}, rng);
    const Tensor g = random_tensor(maxpool2d(x, size, stride).shape(), rng);
    auto loss = [&] { return dot(maxpool2d(x, size, stride).values(), g.values()); };
    const Tensor an = maxpool2d_backward(x, size, stride, g);
    CHECK(rel_error(an.values(), numeric_grad(x.values(), loss)) <= 1e-2);
  }
}

TEST_CASE("relu gradients match central differences") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({1, 2, 4, 5}, rng);
    for (float& v : x.values()) v = v < 0 ? std::min(v, -0.01f) : std::max(v, 0.01f);
    const Tensor g = random_tensor(x.shape(), rng);
    auto loss = [&] { return dot(relu(x).values(), g.values()); };
    CHECK(rel_error(relu_backward(x, g).values(), numeric_grad(x.values(), loss)) <= 1e-2);
  }
}

TEST_CASE("batchnorm train-mode gradients match central differences") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = rand_int(rng, 1, 3);
    Tensor x = random_tensor({rand_int(rng, 1, 3), c, rand_int(rng, 2, 4), rand_int(rng, 2, 4)}, rng);
    BatchNormParams p = BatchNormParams::identity(c);
    for (int k = 0; k < c; ++k) {
      p.gamma[k] = std::uniform_real_distribution<float>(0.5f, 1.5f)(rng);
      p.beta[k] = std::uniform_real_distribution<float>(-1.0f, 1.0f)(rng);
    }
    // Offset projection so the beta gradient (its channel sum) is well away from 0.
    const Tensor g = random_tensor(x.shape(), rng, 0.2f, 1.0f);
    auto loss = [&] {
      BatchNormParams q = p;
      return dot(batchnorm(x, q, Mode::Train).values(), g.values());
    };
    BatchNormParams q = p;
    BatchNormCache cache;
    batchnorm(x, q, Mode::Train, &cache);
    const BatchNormGrads an = batchnorm_backward(p, cache, g);
    CHECK(rel_error(an.input.values(), numeric_grad(x.values(), loss)) <= 1e-2);
    CHECK(rel_error(an.gamma, numeric_grad(p.gamma, loss)) <= 1e-2);
    CHECK(rel_error(an.beta, numeric_grad(p.beta, loss)) <= 1e-2);
  }
}

TEST_CASE("batchnorm backward without saved state is an error") {
  const BatchNormParams p = BatchNormParams::identity(1);
  CHECK_THROWS(batchnorm_backward(p, BatchNormCache{}, Tensor({1, 1, 2, 2}, 1.0f)));
}

TEST_CASE("xcorr gradients with respect to both inputs match central differences") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = rand_int(rng, 1, 2), c = rand_int(rng, 1, 3);
    Tensor z = random_tensor({rand_int(rng, 0, 1) ? n : 1, c, rand_int(rng, 1, 3), rand_int(rng, 1, 3)}, rng);
    Tensor x = random_tensor({n, c, z.h() + rand_int(rng, 0, 4), z.w() + rand_int(rng, 0, 4)}, rng);
    const Tensor g = random_tensor(xcorr(z, x).shape(), rng);
    auto loss = [&] { return dot(xcorr(z, x).values(), g.values()); };
    const XcorrGrads an = xcorr_backward(z, x, g);
    CHECK(rel_error(an.exemplar.values(), numeric_grad(z.values(), loss)) <= 1e-2);
    CHECK(rel_error(an.search.values(), numeric_grad(x.values(), loss)) <= 1e-2);
  }
}

TEST_CASE("tensor basics") {
  Tensor t({2, 1, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(t.at(1, 0, 1, 0) == 6.0f);
  CHECK(t.batch_slice(1).at(0, 0, 0, 1) == 5.0f);
  CHECK_THROWS_AS(Tensor({1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
  const Tensor parts[] = {t.batch_slice(0), t.batch_slice(1)};
  CHECK(max_abs_diff(concat_batch(parts), t) == 0.0f);
  t.at(0, 0, 0, 0) = std::nanf("");
  CHECK_FALSE(all_finite(t));
}
