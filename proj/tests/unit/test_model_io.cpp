#include <doctest.h>

#include <algorithm>

#include "siamfc/error.hpp"
#include "siamfc/model_io.hpp"
#include "test_util.hpp"

using namespace siamfc;

namespace {

SiameseModel sample_model() {
  SiameseModel m{init_params(build_net("tiny"), 21), {0.375f}};
  std::mt19937_64 rng(22);
  for (auto& l : m.net.layers) {
    if (l.kind != LayerKind::BatchNorm) continue;
    for (float& v : l.bn.running_mean) v = std::uniform_real_distribution<float>(-1, 1)(rng);
    for (float& v : l.bn.running_var) v = std::uniform_real_distribution<float>(0.5f, 2)(rng);
  }
  return m;
}

}  // namespace

TEST_CASE("model round trip is bit exact") {
  const SiameseModel m = sample_model();
  const auto bytes = encode_model(m);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SFCM");
  const SiameseModel back = decode_model(bytes);
  CHECK(back.bias.b == m.bias.b);
  CHECK(back.net.preset == "tiny");
  REQUIRE(back.net.layers.size() == m.net.layers.size());
  for (std::size_t i = 0; i < m.net.layers.size(); ++i) {
    const Layer &a = m.net.layers[i], &b = back.net.layers[i];
    CHECK(a.name == b.name);
    CHECK(a.kind == b.kind);
    CHECK(a.weights.size() == b.weights.size());
    CHECK(std::equal(a.weights.values().begin(), a.weights.values().end(), b.weights.values().begin()));
    CHECK(a.bias == b.bias);
    CHECK(a.bn.running_var == b.bn.running_var);
    CHECK(a.bn.gamma == b.bn.gamma);
  }
  CHECK(encode_model(back) == bytes);

  const auto dir = testutil::temp_dir("model_io");
  save_model(m, dir / "m.sfcm");
  CHECK(encode_model(load_model(dir / "m.sfcm", "tiny")) == bytes);
  CHECK_THROWS_AS(load_model(dir / "m.sfcm", "paper"), ShapeError);
  CHECK_THROWS_AS(load_model(dir / "missing.sfcm"), IoError);
}

TEST_CASE("corrupted model files are diagnosed") {
  const auto bytes = encode_model(sample_model());

  auto flipped = bytes;
  flipped[bytes.size() - 100] ^= 0x40;
  CHECK_THROWS_AS(decode_model(flipped), ChecksumError);

  for (std::size_t cut : {std::size_t{7}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    CAPTURE(cut);
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + cut);
    CHECK_THROWS_AS(decode_model(part), TruncatedError);
  }

  auto version = bytes;
  version[4] = 9;
  CHECK_THROWS_AS(decode_model(version), VersionError);

  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_model(magic), FormatError);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_model(trailing), FormatError);
}

TEST_CASE("architecture comparison names the mismatch") {
  const EmbeddingNet tiny = build_net("tiny");
  EmbeddingNet other = tiny;
  other.layers[0].conv.stride = 4;
  try {
    check_same_architecture(tiny, other);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("conv1") != std::string::npos);
  }
  CHECK_NOTHROW(check_same_architecture(tiny, build_net("tiny")));
}
