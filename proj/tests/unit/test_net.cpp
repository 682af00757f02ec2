#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "siamfc/error.hpp"
#include "siamfc/kernels.hpp"
#include "siamfc/net.hpp"
#include "test_util.hpp"

using namespace siamfc;
using testutil::random_tensor;

namespace {

std::map<std::string, LayerShape> shapes_by_name(const EmbeddingNet& net, int side) {
  std::map<std::string, LayerShape> out;
  for (const auto& s : net.infer_shapes(side, side)) out[s.name] = s;
  return out;
}

// Random infer-mode batch-norm statistics so folding has something to fold.
void randomize_bn(EmbeddingNet& net, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.5f, 1.5f), v(-0.3f, 0.3f);
  for (auto& l : net.layers) {
    if (l.kind != LayerKind::BatchNorm) continue;
    for (int c = 0; c < l.bn.channels(); ++c) {
      l.bn.gamma[c] = u(rng);
      l.bn.beta[c] = v(rng);
      l.bn.running_mean[c] = v(rng);
      l.bn.running_var[c] = u(rng);
    }
  }
}

ArchSpec small_arch(bool relu = true) {
  ArchSpec a;
  a.name = "small";
  a.in_channels = 2;
  a.stages = {{3, 1, 4, 2, true, relu, 2, 2}, {3, 1, 4, 2, true, false, 0, 0}};
  return a;
}

}  // namespace

TEST_CASE("paper preset reproduces the embedding table") {
  const EmbeddingNet net = build_net("paper");
  CHECK(net.total_stride() == 8);
  CHECK(net.out_channels() == 256);
  const std::vector<std::tuple<std::string, int, int, int>> expected = {
      {"conv1", 96, 59, 123}, {"pool1", 96, 29, 61},  {"conv2", 256, 25, 57},
      {"pool2", 256, 12, 28}, {"conv3", 384, 10, 26}, {"conv4", 384, 8, 24},
      {"conv5", 256, 6, 22}};
  const auto ex = shapes_by_name(net, 127), sx = shapes_by_name(net, 255);
  for (const auto& [name, ch, e, s] : expected) {
    CAPTURE(name);
    CHECK(ex.at(name).channels == ch);
    CHECK(ex.at(name).height == e);
    CHECK(sx.at(name).height == s);
    CHECK(sx.at(name).width == s);
  }
  // Channel maps per filter: 96x3, 256x48, 384x256, 384x192, 256x192.
  const std::vector<std::pair<int, int>> maps = {{96, 3}, {256, 48}, {384, 256}, {384, 192}, {256, 192}};
  std::size_t conv = 0, expected_params = 0;
  for (const auto& l : net.layers) {
    if (l.kind == LayerKind::BatchNorm) expected_params += 2 * l.bn.channels();
    if (l.kind != LayerKind::Conv) continue;
    CHECK(l.weights.n() == maps[conv].first);
    CHECK(l.weights.c() == maps[conv].second);
    expected_params += static_cast<std::size_t>(l.weights.n()) * l.weights.c() * l.conv.kernel_h * l.conv.kernel_w + l.weights.n();
    ++conv;
  }
  CHECK(conv == 5);
  CHECK(net.parameter_count() == expected_params);
  // conv1 alone: 11*11*3*96 weights plus 96 biases.
  CHECK(net.layers.front().parameter_count() == 34848u + 96u);
}

TEST_CASE("tiny preset keeps the geometry") {
  const EmbeddingNet net = build_net("tiny");
  CHECK(net.total_stride() == 8);
  CHECK(net.out_channels() == 32);
  CHECK(shapes_by_name(net, 127).at("conv5").height == 6);
  CHECK(shapes_by_name(net, 255).at("conv5").height == 22);
  CHECK_THROWS_AS(build_net("huge"), ConfigError);
}

TEST_CASE("inconsistent architectures are rejected") {
  ArchSpec a = small_arch();
  a.stages[1].in_per_group = 3;
  CHECK_THROWS_AS(build_net(a), ConfigError);
  a = small_arch();
  a.stages[0].pool_stride = 0;
  CHECK_THROWS_AS(build_net(a), ConfigError);
}

TEST_CASE("too small inputs name the first layer that underflows") {
  const EmbeddingNet net = build_net("tiny");
  try {
    (void)net.infer_shapes(20, 20);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("conv2") != std::string::npos);
  }
  CHECK_THROWS_AS(embed(init_params(net, 1), Tensor({1, 3, 20, 20})), ShapeError);
}

TEST_CASE("initialization is deterministic and He-scaled") {
  const EmbeddingNet a = init_params(build_net("paper"), 7);
  const EmbeddingNet b = init_params(build_net("paper"), 7);
  const EmbeddingNet c = init_params(build_net("paper"), 8);
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].kind != LayerKind::Conv) continue;
    const auto wa = a.layers[i].weights.values();
    CHECK(std::equal(wa.begin(), wa.end(), b.layers[i].weights.values().begin()));
    CHECK_FALSE(std::equal(wa.begin(), wa.end(), c.layers[i].weights.values().begin()));
    double mean = 0, var = 0;
    for (float w : wa) mean += w;
    mean /= wa.size();
    for (float w : wa) var += (w - mean) * (w - mean);
    var /= wa.size();
    const auto& cs = a.layers[i].conv;
    const double target = 2.0 / (a.layers[i].weights.c() * cs.kernel_h * cs.kernel_w);
    CAPTURE(a.layers[i].name);
    CHECK(std::abs(var / target - 1.0) < 0.2);
    CHECK(std::all_of(a.layers[i].bias.begin(), a.layers[i].bias.end(), [](float v) { return v == 0.0f; }));
  }
}

TEST_CASE("paper preset live forward produces 6x6 and 22x22 maps") {
  const EmbeddingNet net = init_params(build_net("paper"), 3);
  std::mt19937_64 rng(4);
  const Tensor z = embed(net, random_tensor({1, 3, 127, 127}, rng, 0, 1));
  const Tensor x = embed(net, random_tensor({1, 3, 255, 255}, rng, 0, 1));
  CHECK(z.shape() == Shape{1, 256, 6, 6});
  CHECK(x.shape() == Shape{1, 256, 22, 22});
  const Tensor s = score(net, {0.0f}, random_tensor({1, 3, 127, 127}, rng, 0, 1),
                         random_tensor({1, 3, 255, 255}, rng, 0, 1));
  CHECK(s.shape() == Shape{1, 1, 17, 17});
  CHECK(all_finite(s));
}

TEST_CASE("score bias shifts every cell") {
  const EmbeddingNet net = init_params(build_net("tiny"), 5);
  std::mt19937_64 rng(6);
  const Tensor z = random_tensor({1, 3, 127, 127}, rng, 0, 1);
  const Tensor x = random_tensor({2, 3, 255, 255}, rng, 0, 1);
  const Tensor s0 = score(net, {0.0f}, z, x), s1 = score(net, {1.25f}, z, x);
  CHECK(s0.shape() == Shape{2, 1, 17, 17});
  for (std::size_t i = 0; i < s0.size(); ++i) CHECK(s1.values()[i] - s0.values()[i] == doctest::Approx(1.25f));
}

TEST_CASE("equal-size score is symmetric") {
  const EmbeddingNet net = init_params(build_net("tiny"), 9);
  std::mt19937_64 rng(10);
  for (int t = 0; t < 3; ++t) {
    const Tensor a = random_tensor({1, 3, 127, 127}, rng, 0, 1);
    const Tensor b = random_tensor({1, 3, 127, 127}, rng, 0, 1);
    CHECK(score(net, {0.3f}, a, b).values()[0] == doctest::Approx(score(net, {0.3f}, b, a).values()[0]));
  }
}

TEST_CASE("centre score equals the inner product with the central window") {
  const EmbeddingNet net = init_params(build_net("tiny"), 11);
  std::mt19937_64 rng(12);
  const Tensor z = random_tensor({1, 3, 127, 127}, rng, 0, 1);
  const Tensor x = random_tensor({1, 3, 255, 255}, rng, 0, 1);
  const Tensor fz = embed(net, z), fx = embed(net, x);
  const int off = (fx.h() - fz.h()) / 2;
  double ip = 0.0;
  for (int c = 0; c < fz.c(); ++c)
    for (int y = 0; y < fz.h(); ++y)
      for (int xx = 0; xx < fz.w(); ++xx) ip += double(fz.at(0, c, y, xx)) * fx.at(0, c, y + off, xx + off);
  const Tensor s = score(net, {0.5f}, z, x);
  CHECK(s.at(0, 0, 8, 8) == doctest::Approx(ip + 0.5).epsilon(1e-4));
}

TEST_CASE("embedding commutes with translations by the total stride") {
  const EmbeddingNet net = init_params(build_net("tiny"), 13);
  std::mt19937_64 rng(14);
  for (int t = 0; t < 4; ++t) {
    const int dy = testutil::rand_int(rng, 0, 3), dx = testutil::rand_int(rng, 0, 3);
    const Tensor big = random_tensor({1, 3, 160, 160}, rng, 0, 1);
    Tensor a({1, 3, 127, 127}), b({1, 3, 127, 127});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 127; ++y)
        for (int x = 0; x < 127; ++x) {
          a.at(0, c, y, x) = big.at(0, c, y, x);
          b.at(0, c, y, x) = big.at(0, c, y + 8 * dy, x + 8 * dx);
        }
    const Tensor fa = embed(net, a), fb = embed(net, b);
    double worst = 0.0;
    for (int c = 0; c < fa.c(); ++c)
      for (int y = 0; y + dy < fa.h(); ++y)
        for (int x = 0; x + dx < fa.w(); ++x)
          worst = std::max(worst, double(std::abs(fb.at(0, c, y, x) - fa.at(0, c, y + dy, x + dx))));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("folding batch norm preserves the infer-mode function") {
  std::mt19937_64 rng(15);
  EmbeddingNet net = init_params(build_net("tiny"), 16);
  randomize_bn(net, rng);
  const EmbeddingNet folded = fold_batchnorm(net);
  CHECK(std::none_of(folded.layers.begin(), folded.layers.end(),
                     [](const Layer& l) { return l.kind == LayerKind::BatchNorm; }));
  const Tensor x = random_tensor({2, 3, 127, 127}, rng, 0, 1);
  const Tensor a = embed(net, x), b = embed(folded, x);
  double scale = 0.0;
  for (float v : a.values()) scale = std::max(scale, double(std::abs(v)));
  CHECK(max_abs_diff(a, b) <= 1e-4 * std::max(1.0, scale));
}

TEST_CASE("embed_backward matches finite differences") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    // Odd trials drop the ReLU so the batch-norm parameters, which move
    // hundreds of pre-activations at once, see no kinks.
    const bool relu = trial % 2 == 0;
    EmbeddingNet net = init_params(build_net(small_arch(relu)), 100 + trial);
    randomize_bn(net, rng);
    const int side = testutil::rand_int(rng, 14, 17);
    Tensor x = random_tensor({2, 2, side, side}, rng);
    EmbeddingNet probe = net;
    const Tensor out_shape_probe = embed(probe, x, Mode::Train);
    const Tensor proj = random_tensor(out_shape_probe.shape(), rng);

    auto loss = [&]() {
      EmbeddingNet scratch = net;
      return testutil::dot(embed(scratch, x, Mode::Train).values(), proj.values());
    };
    EmbeddingNet work = net;
    ForwardTape tape;
    (void)embed(work, x, Mode::Train, &tape);
    const NetGrads g = embed_backward(net, tape, proj, true);

    CAPTURE(trial);
    CHECK(testutil::smooth_rel_error(g.input.values(), x.values(), loss) < 2e-2);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      Layer& l = net.layers[i];
      CAPTURE(l.name);
      if (l.kind == LayerKind::Conv) {
        CHECK(testutil::smooth_rel_error(g.layers[i].weights.values(), l.weights.values(), loss) < 2e-2);
        if (i + 1 < net.layers.size() && net.layers[i + 1].kind == LayerKind::BatchNorm) {
          // A train-mode batch norm cancels any per-channel shift.
          for (float v : g.layers[i].bias) CHECK(std::abs(v) < 1e-4);
        } else {
          CHECK(testutil::smooth_rel_error(g.layers[i].bias, l.bias, loss) < 2e-2);
        }
      } else if (l.kind == LayerKind::BatchNorm && !relu) {
        CHECK(testutil::smooth_rel_error(g.layers[i].gamma, l.bn.gamma, loss) < 2e-2);
        CHECK(testutil::smooth_rel_error(g.layers[i].beta, l.bn.beta, loss) < 2e-2);
      }
    }
  }
}

TEST_CASE("gradient accumulation adds") {
  const EmbeddingNet net = init_params(build_net(small_arch()), 1);
  NetGrads a = NetGrads::zeros_like(net), b = NetGrads::zeros_like(net);
  b.layers[0].weights.values()[0] = 2.0f;
  b.layers[0].bias[1] = -1.0f;
  a.accumulate(b);
  a.accumulate(b);
  CHECK(a.layers[0].weights.values()[0] == 4.0f);
  CHECK(a.layers[0].bias[1] == -2.0f);
}
