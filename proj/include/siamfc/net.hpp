#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "siamfc/kernels.hpp"
#include "siamfc/tensor.hpp"

namespace siamfc {

enum class LayerKind : std::uint8_t { Conv = 1, MaxPool = 2, ReLU = 3, BatchNorm = 4 };

const char* to_string(LayerKind kind);

/// One entry of the embedding stack. Only the fields of its kind are used.
struct Layer {
  LayerKind kind = LayerKind::ReLU;
  std::string name;

  // Conv
  ConvSpec conv;
  Tensor weights;
  std::vector<float> bias;

  // MaxPool
  int pool_size = 0;
  int pool_stride = 0;

  // BatchNorm
  BatchNormParams bn;

  int stride() const;
  std::size_t parameter_count() const;
};

/// Architecture description: one stage per convolution, optionally followed by
/// batch norm, ReLU and max-pooling (in that order).
struct ConvStage {
  int kernel = 3;
  int stride = 1;
  int out_channels = 1;
  /// Input channels seen by each filter. Groups are inferred as
  /// previous_out_channels / in_per_group.
  int in_per_group = 1;
  bool batchnorm = true;
  bool relu = true;
  int pool_size = 0;  // 0: no pooling
  int pool_stride = 0;
};

struct ArchSpec {
  std::string name;
  int in_channels = 3;
  std::vector<ConvStage> stages;
};

/// The AlexNet-like five-convolution embedding with total stride 8.
ArchSpec paper_arch();
/// Same kernels and strides with channels {12, 32, 48, 48, 32}, no grouping.
ArchSpec tiny_arch();
/// "paper" or "tiny"; throws ConfigError otherwise.
ArchSpec arch_for_preset(std::string_view preset);

/// Spatial output of one layer during shape inference.
struct LayerShape {
  std::string name;
  int channels = 0;
  int height = 0;
  int width = 0;
};

/// The embedding function: an ordered stack of unpadded layers.
class EmbeddingNet {
 public:
  std::string preset;
  int in_channels = 3;
  std::vector<Layer> layers;

  int total_stride() const;
  std::size_t parameter_count() const;
  int out_channels() const;

  /// Per-layer output sizes for an in_channels x h x w input. Throws
  /// ShapeError naming the first layer whose window does not fit.
  std::vector<LayerShape> infer_shapes(int h, int w) const;
};

/// Builds the layer stack with zero weights and identity batch norm.
/// Throws ConfigError listing the violated constraint for inconsistent specs.
EmbeddingNet build_net(const ArchSpec& arch);
EmbeddingNet build_net(std::string_view preset);

/// He-scaled ("improved Xavier") Gaussian weights with variance
/// 2 / (in_per_group * kernel area), zero biases, identity batch norm.
/// Deterministic for a given seed.
EmbeddingNet init_params(EmbeddingNet net, std::uint64_t seed);

/// Inputs and batch-norm state saved by a forward pass for the backward pass.
struct ForwardTape {
  std::vector<Tensor> inputs;  // input of each layer
  std::vector<BatchNormCache> bn;  // indexed like layers; empty for non-BN
};

/// Infer-mode embedding; the net is left untouched.
Tensor embed(const EmbeddingNet& net, const Tensor& images);

/// Embedding in either mode. Train mode uses batch statistics and updates
/// the running statistics in `net`; when `tape` is given, it records what
/// embed_backward needs.
Tensor embed(EmbeddingNet& net, const Tensor& images, Mode mode,
             ForwardTape* tape = nullptr);

struct LayerGrads {
  Tensor weights;
  std::vector<float> bias;
  std::vector<float> gamma;
  std::vector<float> beta;
};

struct NetGrads {
  std::vector<LayerGrads> layers;
  Tensor input;  // empty unless requested

  /// Zero gradients shaped like the parameters of `net`.
  static NetGrads zeros_like(const EmbeddingNet& net);
  void accumulate(const NetGrads& other);
};

NetGrads embed_backward(const EmbeddingNet& net, const ForwardTape& tape,
                        const Tensor& grad_output, bool need_input_grad = false);

/// The scalar b added to every cell of the score map.
struct ScoreBias {
  float b = 0.0f;
};

/// Embedding plus score bias: everything a trained tracker needs.
struct SiameseModel {
  EmbeddingNet net;
  ScoreBias bias;
};

/// xcorr(embed(exemplar), embed(search)) + b in infer mode.
/// Returns an (N, 1, H, W) tensor, one map per search item.
Tensor score(const EmbeddingNet& net, ScoreBias bias, const Tensor& exemplar,
             const Tensor& search);

/// Folds every infer-mode batch norm into the preceding convolution.
/// The result computes the same function without BatchNorm layers.
EmbeddingNet fold_batchnorm(const EmbeddingNet& net);

}  // namespace siamfc
