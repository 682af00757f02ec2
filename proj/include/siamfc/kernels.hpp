#pragma once

#include <span>
#include <vector>

#include "siamfc/tensor.hpp"

namespace siamfc {

/// Geometry of a VALID (unpadded) grouped convolution.
struct ConvSpec {
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int groups = 1;
  int out_channels = 1;
};

/// Output extent of a VALID window of `kernel` taps moved by `stride`.
/// Returns 0 when the window does not fit.
inline int valid_extent(int in, int kernel, int stride) {
  return in < kernel ? 0 : (in - kernel) / stride + 1;
}

enum class Mode { Train, Infer };

// Convolution. Weights are (out_channels, in_channels / groups, kh, kw).
// conv2d uses an im2col + GEMM path; conv2d_direct is the plain nested-loop
// reference the fast path is validated against.
Tensor conv2d(const Tensor& input, const Tensor& weights,
              std::span<const float> bias, const ConvSpec& spec);
Tensor conv2d_direct(const Tensor& input, const Tensor& weights,
                     std::span<const float> bias, const ConvSpec& spec);

struct ConvGrads {
  Tensor input;  // empty when not requested
  Tensor weights;
  std::vector<float> bias;
};

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights,
                          const ConvSpec& spec, const Tensor& grad_output,
                          bool need_input_grad = true);

Tensor maxpool2d(const Tensor& input, int size, int stride);

/// Routes each output gradient to the first (row-major) maximum of its window.
Tensor maxpool2d_backward(const Tensor& input, int size, int stride,
                          const Tensor& grad_output);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

/// Per-channel affine parameters and running statistics.
struct BatchNormParams {
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> running_mean;
  std::vector<float> running_var;
  float eps = 1e-5f;
  float momentum = 0.1f;

  static BatchNormParams identity(int channels);
  int channels() const { return static_cast<int>(gamma.size()); }
};

/// Saved state of a train-mode batch-norm forward, needed by the backward.
struct BatchNormCache {
  std::vector<float> mean;
  std::vector<float> inv_std;
  Tensor normalized;  // x_hat, before scale/shift
};

/// Train mode normalizes with batch statistics over (n, h, w), fills `cache`
/// if given and updates the running statistics of `params` by exponential
/// moving average. Infer mode uses the running statistics and leaves
/// `params` untouched.
Tensor batchnorm(const Tensor& input, BatchNormParams& params, Mode mode,
                 BatchNormCache* cache = nullptr);

/// Infer-mode batch norm on const parameters.
Tensor batchnorm_infer(const Tensor& input, const BatchNormParams& params);

struct BatchNormGrads {
  Tensor input;
  std::vector<float> gamma;
  std::vector<float> beta;
};

/// Full batch-statistics gradient of a train-mode batch norm.
BatchNormGrads batchnorm_backward(const BatchNormParams& params,
                                  const BatchNormCache& cache,
                                  const Tensor& grad_output);

/// Dense cross-correlation of exemplar features against search features.
///
/// exemplar is (1 or N, C, hz, wz), search is (N, C, hx, wx); a single
/// exemplar is shared by every search item. The result is (N, 1, hx-hz+1,
/// wx-wz+1) where each cell is the inner product of the exemplar with the
/// co-located search sub-window over all channels.
Tensor xcorr(const Tensor& exemplar, const Tensor& search);

struct XcorrGrads {
  Tensor exemplar;  // same shape as the exemplar input
  Tensor search;
};

XcorrGrads xcorr_backward(const Tensor& exemplar, const Tensor& search,
                          const Tensor& grad_output);

}  // namespace siamfc
