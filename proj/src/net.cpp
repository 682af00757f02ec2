#include "siamfc/net.hpp"

#include <cmath>
#include <random>

#include "siamfc/error.hpp"

namespace siamfc {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv:
      return "conv";
    case LayerKind::MaxPool:
      return "pool";
    case LayerKind::ReLU:
      return "relu";
    case LayerKind::BatchNorm:
      return "bn";
  }
  return "unknown";
}

int Layer::stride() const {
  switch (kind) {
    case LayerKind::Conv:
      return conv.stride;
    case LayerKind::MaxPool:
      return pool_stride;
    default:
      return 1;
  }
}

std::size_t Layer::parameter_count() const {
  switch (kind) {
    case LayerKind::Conv:
      return weights.size() + bias.size();
    case LayerKind::BatchNorm:
      return bn.gamma.size() + bn.beta.size();
    default:
      return 0;
  }
}

ArchSpec paper_arch() {
  ArchSpec arch;
  arch.name = "paper";
  arch.in_channels = 3;
  arch.stages = {
      {11, 2, 96, 3, true, true, 3, 2},
      {5, 1, 256, 48, true, true, 3, 2},
      {3, 1, 384, 256, true, true, 0, 0},
      {3, 1, 384, 192, true, true, 0, 0},
      {3, 1, 256, 192, true, false, 0, 0},
  };
  return arch;
}

ArchSpec tiny_arch() {
  ArchSpec arch;
  arch.name = "tiny";
  arch.in_channels = 3;
  arch.stages = {
      {11, 2, 12, 3, true, true, 3, 2},
      {5, 1, 32, 12, true, true, 3, 2},
      {3, 1, 48, 32, true, true, 0, 0},
      {3, 1, 48, 48, true, true, 0, 0},
      {3, 1, 32, 48, true, false, 0, 0},
  };
  return arch;
}

ArchSpec arch_for_preset(std::string_view preset) {
  if (preset == "paper") return paper_arch();
  if (preset == "tiny") return tiny_arch();
  throw ConfigError("unknown preset '" + std::string(preset) +
                    "' (expected paper or tiny)");
}

int EmbeddingNet::total_stride() const {
  int stride = 1;
  for (const auto& layer : layers) stride *= layer.stride();
  return stride;
}

std::size_t EmbeddingNet::parameter_count() const {
  std::size_t total = 0;
  for (const auto& layer : layers) total += layer.parameter_count();
  return total;
}

int EmbeddingNet::out_channels() const {
  int channels = in_channels;
  for (const auto& layer : layers) {
    if (layer.kind == LayerKind::Conv) channels = layer.conv.out_channels;
  }
  return channels;
}

std::vector<LayerShape> EmbeddingNet::infer_shapes(int h, int w) const {
  std::vector<LayerShape> shapes;
  int c = in_channels;
  for (const auto& layer : layers) {
    int kh = 1, kw = 1, stride = 1;
    if (layer.kind == LayerKind::Conv) {
      kh = layer.conv.kernel_h;
      kw = layer.conv.kernel_w;
      stride = layer.conv.stride;
    } else if (layer.kind == LayerKind::MaxPool) {
      kh = kw = layer.pool_size;
      stride = layer.pool_stride;
    }
    if (h < kh || w < kw) {
      throw ShapeError(layer.name + " underflows: input " + std::to_string(h) +
                       "x" + std::to_string(w) + " smaller than its " +
                       std::to_string(kh) + "x" + std::to_string(kw) + " window");
    }
    h = valid_extent(h, kh, stride);
    w = valid_extent(w, kw, stride);
    if (layer.kind == LayerKind::Conv) c = layer.conv.out_channels;
    shapes.push_back({layer.name, c, h, w});
  }
  return shapes;
}

EmbeddingNet build_net(const ArchSpec& arch) {
  if (arch.in_channels < 1) throw ConfigError("architecture needs at least one input channel");
  if (arch.stages.empty()) throw ConfigError("architecture has no convolution stages");

  EmbeddingNet net;
  net.preset = arch.name;
  net.in_channels = arch.in_channels;
  int prev = arch.in_channels;
  for (std::size_t i = 0; i < arch.stages.size(); ++i) {
    const ConvStage& st = arch.stages[i];
    const std::string idx = std::to_string(i + 1);
    if (st.kernel < 1 || st.stride < 1 || st.out_channels < 1 || st.in_per_group < 1) {
      throw ConfigError("conv" + idx + ": kernel, stride, out_channels and in_per_group must be positive");
    }
    if (prev % st.in_per_group != 0) {
      throw ConfigError("conv" + idx + ": previous output channels " +
                        std::to_string(prev) + " not divisible by channel-map input " +
                        std::to_string(st.in_per_group));
    }
    const int groups = prev / st.in_per_group;
    if (st.out_channels % groups != 0) {
      throw ConfigError("conv" + idx + ": output channels " +
                        std::to_string(st.out_channels) + " not divisible by inferred groups " +
                        std::to_string(groups));
    }
    if ((st.pool_size > 0) != (st.pool_stride > 0)) {
      throw ConfigError("conv" + idx + ": pool size and pool stride must both be set or both be zero");
    }

    Layer conv;
    conv.kind = LayerKind::Conv;
    conv.name = "conv" + idx;
    conv.conv = {st.kernel, st.kernel, st.stride, groups, st.out_channels};
    conv.weights = Tensor({st.out_channels, st.in_per_group, st.kernel, st.kernel});
    conv.bias.assign(st.out_channels, 0.0f);
    net.layers.push_back(std::move(conv));

    if (st.batchnorm) {
      Layer bn;
      bn.kind = LayerKind::BatchNorm;
      bn.name = "bn" + idx;
      bn.bn = BatchNormParams::identity(st.out_channels);
      net.layers.push_back(std::move(bn));
    }
    if (st.relu) {
      Layer r;
      r.kind = LayerKind::ReLU;
      r.name = "relu" + idx;
      net.layers.push_back(std::move(r));
    }
    if (st.pool_size > 0) {
      Layer pool;
      pool.kind = LayerKind::MaxPool;
      pool.name = "pool" + idx;
      pool.pool_size = st.pool_size;
      pool.pool_stride = st.pool_stride;
      net.layers.push_back(std::move(pool));
    }
    prev = st.out_channels;
  }
  return net;
}

EmbeddingNet build_net(std::string_view preset) {
  return build_net(arch_for_preset(preset));
}

EmbeddingNet init_params(EmbeddingNet net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& layer : net.layers) {
    if (layer.kind == LayerKind::Conv) {
      const double fan_in = static_cast<double>(layer.weights.c()) *
                            layer.conv.kernel_h * layer.conv.kernel_w;
      std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / fan_in));
      for (float& v : layer.weights.values()) v = static_cast<float>(gauss(rng));
      std::fill(layer.bias.begin(), layer.bias.end(), 0.0f);
    } else if (layer.kind == LayerKind::BatchNorm) {
      const float eps = layer.bn.eps;
      const float momentum = layer.bn.momentum;
      layer.bn = BatchNormParams::identity(layer.bn.channels());
      layer.bn.eps = eps;
      layer.bn.momentum = momentum;
    }
  }
  return net;
}

namespace {

void check_input(const EmbeddingNet& net, const Tensor& images) {
  if (images.c() != net.in_channels) {
    throw ShapeError("embed: input has " + std::to_string(images.c()) +
                     " channels, network expects " + std::to_string(net.in_channels));
  }
  net.infer_shapes(images.h(), images.w());
}

Tensor forward_layer(const Layer& layer, const Tensor& x) {
  switch (layer.kind) {
    case LayerKind::Conv:
      return conv2d(x, layer.weights, layer.bias, layer.conv);
    case LayerKind::MaxPool:
      return maxpool2d(x, layer.pool_size, layer.pool_stride);
    case LayerKind::ReLU:
      return relu(x);
    case LayerKind::BatchNorm:
      return batchnorm_infer(x, layer.bn);
  }
  throw ConfigError("unknown layer kind");
}

}  // namespace

Tensor embed(const EmbeddingNet& net, const Tensor& images) {
  check_input(net, images);
  Tensor x = images;
  for (const auto& layer : net.layers) x = forward_layer(layer, x);
  return x;
}

Tensor embed(EmbeddingNet& net, const Tensor& images, Mode mode, ForwardTape* tape) {
  if (mode == Mode::Infer && tape == nullptr) {
    return embed(static_cast<const EmbeddingNet&>(net), images);
  }
  check_input(net, images);
  if (tape) {
    tape->inputs.clear();
    tape->bn.assign(net.layers.size(), {});
  }
  Tensor x = images;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    Layer& layer = net.layers[i];
    if (tape) tape->inputs.push_back(x);
    if (layer.kind == LayerKind::BatchNorm) {
      x = batchnorm(x, layer.bn, mode, tape ? &tape->bn[i] : nullptr);
    } else {
      x = forward_layer(layer, x);
    }
  }
  return x;
}

NetGrads NetGrads::zeros_like(const EmbeddingNet& net) {
  NetGrads grads;
  grads.layers.resize(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& layer = net.layers[i];
    if (layer.kind == LayerKind::Conv) {
      grads.layers[i].weights = Tensor(layer.weights.shape());
      grads.layers[i].bias.assign(layer.bias.size(), 0.0f);
    } else if (layer.kind == LayerKind::BatchNorm) {
      grads.layers[i].gamma.assign(layer.bn.gamma.size(), 0.0f);
      grads.layers[i].beta.assign(layer.bn.beta.size(), 0.0f);
    }
  }
  return grads;
}

void NetGrads::accumulate(const NetGrads& other) {
  if (other.layers.size() != layers.size()) {
    throw ShapeError("NetGrads::accumulate: layer count mismatch");
  }
  auto add = [](std::span<float> dst, std::span<const float> src) {
    if (dst.size() != src.size()) throw ShapeError("NetGrads::accumulate: size mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    add(layers[i].weights.values(), other.layers[i].weights.values());
    add(layers[i].bias, other.layers[i].bias);
    add(layers[i].gamma, other.layers[i].gamma);
    add(layers[i].beta, other.layers[i].beta);
  }
}

NetGrads embed_backward(const EmbeddingNet& net, const ForwardTape& tape,
                        const Tensor& grad_output, bool need_input_grad) {
  if (tape.inputs.size() != net.layers.size() || tape.bn.size() != net.layers.size()) {
    throw ConfigError("embed_backward: tape does not match the network (missing train-mode forward?)");
  }
  NetGrads grads;
  grads.layers.resize(net.layers.size());
  Tensor g = grad_output;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const Layer& layer = net.layers[li];
    const Tensor& x = tape.inputs[li];
    const bool need_dx = li > 0 || need_input_grad;
    switch (layer.kind) {
      case LayerKind::Conv: {
        ConvGrads cg = conv2d_backward(x, layer.weights, layer.conv, g, need_dx);
        grads.layers[li].weights = std::move(cg.weights);
        grads.layers[li].bias = std::move(cg.bias);
        g = std::move(cg.input);
        break;
      }
      case LayerKind::MaxPool:
        g = maxpool2d_backward(x, layer.pool_size, layer.pool_stride, g);
        break;
      case LayerKind::ReLU:
        g = relu_backward(x, g);
        break;
      case LayerKind::BatchNorm: {
        BatchNormGrads bg = batchnorm_backward(layer.bn, tape.bn[li], g);
        grads.layers[li].gamma = std::move(bg.gamma);
        grads.layers[li].beta = std::move(bg.beta);
        g = std::move(bg.input);
        break;
      }
    }
  }
  if (need_input_grad) grads.input = std::move(g);
  return grads;
}

Tensor score(const EmbeddingNet& net, ScoreBias bias, const Tensor& exemplar,
             const Tensor& search) {
  Tensor out = xcorr(embed(net, exemplar), embed(net, search));
  for (float& v : out.values()) v += bias.b;
  return out;
}

EmbeddingNet fold_batchnorm(const EmbeddingNet& net) {
  EmbeddingNet folded;
  folded.preset = net.preset;
  folded.in_channels = net.in_channels;
  for (const auto& layer : net.layers) {
    if (layer.kind != LayerKind::BatchNorm) {
      folded.layers.push_back(layer);
      continue;
    }
    if (folded.layers.empty() || folded.layers.back().kind != LayerKind::Conv) {
      throw ConfigError(layer.name + ": batch norm without a preceding convolution cannot be folded");
    }
    Layer& conv = folded.layers.back();
    const std::size_t per_out = conv.weights.size() / conv.weights.n();
    for (int co = 0; co < conv.weights.n(); ++co) {
      const double scale =
          layer.bn.gamma[co] / std::sqrt(static_cast<double>(layer.bn.running_var[co]) + layer.bn.eps);
      float* w = conv.weights.data() + co * per_out;
      for (std::size_t i = 0; i < per_out; ++i) w[i] = static_cast<float>(w[i] * scale);
      conv.bias[co] = static_cast<float>((conv.bias[co] - layer.bn.running_mean[co]) * scale +
                                         layer.bn.beta[co]);
    }
  }
  return folded;
}

}  // namespace siamfc
