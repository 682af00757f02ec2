#include "siamfc/model_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "siamfc/error.hpp"

namespace siamfc {
namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void floats(std::span<const float> values) {
    for (float v : values) f32(v);
  }
  void str(std::string_view s) {
    if (s.size() > 0xFFFF) throw FormatError("string too long for model file");
    u16(static_cast<std::uint16_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(std::span<const std::uint8_t> data) {
    bytes_.insert(bytes_.end(), data.begin(), data.end());
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    auto b = take(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void floats(std::span<float> out) {
    for (float& v : out) v = f32();
  }
  std::string str() {
    const std::uint16_t len = u16();
    auto b = take(len);
    return std::string(b.begin(), b.end());
  }
  std::span<const std::uint8_t> take(std::size_t count) {
    if (pos_ + count > bytes_.size()) {
      throw TruncatedError("model file truncated at byte " + std::to_string(pos_) +
                           " (needed " + std::to_string(count) + " more)");
    }
    auto out = bytes_.subspan(pos_, count);
    pos_ += count;
    return out;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
  return static_cast<std::uint32_t>(crc);
}

int checked_dim(std::uint32_t v, const char* what) {
  if (v == 0 || v > (1u << 24)) {
    throw FormatError(std::string("implausible ") + what + " " + std::to_string(v) +
                      " in layer table");
  }
  return static_cast<int>(v);
}

}  // namespace

std::vector<std::uint8_t> encode_model(const SiameseModel& model) {
  const EmbeddingNet& net = model.net;
  Writer header;
  header.raw({reinterpret_cast<const std::uint8_t*>(kModelMagic), 4});
  header.u16(kModelFormatVersion);
  header.str(net.preset);
  header.u32(static_cast<std::uint32_t>(net.in_channels));
  header.u32(static_cast<std::uint32_t>(net.layers.size()));

  Writer payload;
  payload.f32(model.bias.b);
  for (const auto& layer : net.layers) {
    header.u8(static_cast<std::uint8_t>(layer.kind));
    header.str(layer.name);
    switch (layer.kind) {
      case LayerKind::Conv:
        header.u32(static_cast<std::uint32_t>(layer.conv.out_channels));
        header.u32(static_cast<std::uint32_t>(layer.weights.c()));
        header.u32(static_cast<std::uint32_t>(layer.conv.kernel_h));
        header.u32(static_cast<std::uint32_t>(layer.conv.kernel_w));
        header.u32(static_cast<std::uint32_t>(layer.conv.stride));
        header.u32(static_cast<std::uint32_t>(layer.conv.groups));
        payload.floats(layer.weights.values());
        payload.floats(layer.bias);
        break;
      case LayerKind::MaxPool:
        header.u32(static_cast<std::uint32_t>(layer.pool_size));
        header.u32(static_cast<std::uint32_t>(layer.pool_stride));
        break;
      case LayerKind::BatchNorm:
        header.u32(static_cast<std::uint32_t>(layer.bn.channels()));
        header.f32(layer.bn.eps);
        header.f32(layer.bn.momentum);
        payload.floats(layer.bn.gamma);
        payload.floats(layer.bn.beta);
        payload.floats(layer.bn.running_mean);
        payload.floats(layer.bn.running_var);
        break;
      case LayerKind::ReLU:
        break;
    }
  }
  header.u64(payload.bytes().size());
  header.raw(payload.bytes());
  header.u32(crc32_of(payload.bytes()));
  return std::move(header.bytes());
}

SiameseModel decode_model(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kModelMagic, 4) != 0) {
    throw FormatError("not a model file (bad magic)");
  }
  in.take(4);
  const std::uint16_t version = in.u16();
  if (version != kModelFormatVersion) {
    throw VersionError("model format version " + std::to_string(version) +
                       " unsupported (expected " + std::to_string(kModelFormatVersion) + ")");
  }
  SiameseModel model;
  EmbeddingNet& net = model.net;
  net.preset = in.str();
  net.in_channels = checked_dim(in.u32(), "input channel count");
  const std::uint32_t count = in.u32();
  if (count > 4096) throw FormatError("implausible layer count " + std::to_string(count));

  for (std::uint32_t i = 0; i < count; ++i) {
    Layer layer;
    const std::uint8_t kind = in.u8();
    layer.name = in.str();
    switch (kind) {
      case static_cast<std::uint8_t>(LayerKind::Conv): {
        layer.kind = LayerKind::Conv;
        const int out = checked_dim(in.u32(), "output channel count");
        const int in_per_group = checked_dim(in.u32(), "input channel count");
        const int kh = checked_dim(in.u32(), "kernel height");
        const int kw = checked_dim(in.u32(), "kernel width");
        const int stride = checked_dim(in.u32(), "stride");
        const int groups = checked_dim(in.u32(), "group count");
        layer.conv = {kh, kw, stride, groups, out};
        layer.weights = Tensor({out, in_per_group, kh, kw});
        layer.bias.assign(out, 0.0f);
        break;
      }
      case static_cast<std::uint8_t>(LayerKind::MaxPool):
        layer.kind = LayerKind::MaxPool;
        layer.pool_size = checked_dim(in.u32(), "pool size");
        layer.pool_stride = checked_dim(in.u32(), "pool stride");
        break;
      case static_cast<std::uint8_t>(LayerKind::BatchNorm): {
        layer.kind = LayerKind::BatchNorm;
        const int channels = checked_dim(in.u32(), "batch-norm channel count");
        layer.bn = BatchNormParams::identity(channels);
        layer.bn.eps = in.f32();
        layer.bn.momentum = in.f32();
        break;
      }
      case static_cast<std::uint8_t>(LayerKind::ReLU):
        layer.kind = LayerKind::ReLU;
        break;
      default:
        throw FormatError("unknown layer kind " + std::to_string(kind) + " in layer table");
    }
    net.layers.push_back(std::move(layer));
  }

  const std::uint64_t payload_size = in.u64();
  if (payload_size > in.remaining()) {
    throw TruncatedError("model payload truncated: header announces " +
                         std::to_string(payload_size) + " bytes, " +
                         std::to_string(in.remaining()) + " available");
  }
  const auto payload = in.take(static_cast<std::size_t>(payload_size));
  const std::uint32_t stored_crc = in.u32();
  if (in.remaining() != 0) {
    throw FormatError(std::to_string(in.remaining()) + " trailing bytes after model checksum");
  }
  if (crc32_of(payload) != stored_crc) {
    throw ChecksumError("model payload checksum mismatch");
  }

  Reader p(payload);
  model.bias.b = p.f32();
  for (auto& layer : net.layers) {
    if (layer.kind == LayerKind::Conv) {
      p.floats(layer.weights.values());
      p.floats(layer.bias);
    } else if (layer.kind == LayerKind::BatchNorm) {
      p.floats(layer.bn.gamma);
      p.floats(layer.bn.beta);
      p.floats(layer.bn.running_mean);
      p.floats(layer.bn.running_var);
    }
  }
  if (p.remaining() != 0) {
    throw FormatError("model payload size does not match the layer table");
  }
  return model;
}

void save_model(const SiameseModel& model, const std::filesystem::path& path) {
  const auto bytes = encode_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

SiameseModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_model(bytes);
}

void check_same_architecture(const EmbeddingNet& expected, const EmbeddingNet& actual) {
  if (expected.in_channels != actual.in_channels) {
    throw ShapeError("input channels: file has " + std::to_string(actual.in_channels) +
                     ", expected " + std::to_string(expected.in_channels));
  }
  if (expected.layers.size() != actual.layers.size()) {
    throw ShapeError("layer count: file has " + std::to_string(actual.layers.size()) +
                     ", expected " + std::to_string(expected.layers.size()));
  }
  for (std::size_t i = 0; i < expected.layers.size(); ++i) {
    const Layer& e = expected.layers[i];
    const Layer& a = actual.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + e.name + ")";
    if (e.kind != a.kind) {
      throw ShapeError(where + ": file has a " + to_string(a.kind) + " layer, expected " +
                       to_string(e.kind));
    }
    if (e.kind == LayerKind::Conv &&
        (e.weights.shape() != a.weights.shape() || e.conv.stride != a.conv.stride ||
         e.conv.groups != a.conv.groups)) {
      throw ShapeError(where + ": file has weights " + a.weights.shape().str() + " stride " +
                       std::to_string(a.conv.stride) + " groups " +
                       std::to_string(a.conv.groups) + ", expected " +
                       e.weights.shape().str() + " stride " + std::to_string(e.conv.stride) +
                       " groups " + std::to_string(e.conv.groups));
    }
    if (e.kind == LayerKind::MaxPool &&
        (e.pool_size != a.pool_size || e.pool_stride != a.pool_stride)) {
      throw ShapeError(where + ": pooling geometry differs");
    }
    if (e.kind == LayerKind::BatchNorm && e.bn.channels() != a.bn.channels()) {
      throw ShapeError(where + ": file has " + std::to_string(a.bn.channels()) +
                       " batch-norm channels, expected " + std::to_string(e.bn.channels()));
    }
  }
}

SiameseModel load_model(const std::filesystem::path& path, std::string_view expected_preset) {
  SiameseModel model = load_model(path);
  check_same_architecture(build_net(expected_preset), model.net);
  return model;
}

}  // namespace siamfc
