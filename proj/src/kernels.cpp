#include "siamfc/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "siamfc/error.hpp"
#include "siamfc/parallel.hpp"

namespace siamfc {
namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using ConstMapRM = Eigen::Map<const MatRM>;

std::string dims(int a, int b) {
  return std::to_string(a) + "x" + std::to_string(b);
}

void check_conv(const Tensor& input, const Tensor& weights,
                std::span<const float> bias, const ConvSpec& spec) {
  if (spec.kernel_h < 1 || spec.kernel_w < 1 || spec.stride < 1 ||
      spec.groups < 1 || spec.out_channels < 1) {
    throw ConfigError("conv2d: kernel, stride, groups and out_channels must be positive");
  }
  if (input.c() % spec.groups != 0) {
    throw ShapeError("conv2d: input channels " + std::to_string(input.c()) +
                     " not divisible by groups " + std::to_string(spec.groups));
  }
  if (spec.out_channels % spec.groups != 0) {
    throw ShapeError("conv2d: output channels " +
                     std::to_string(spec.out_channels) +
                     " not divisible by groups " + std::to_string(spec.groups));
  }
  const Shape expected{spec.out_channels, input.c() / spec.groups,
                       spec.kernel_h, spec.kernel_w};
  if (weights.n() != expected.n) {
    throw ShapeError("conv2d: weight output-channel dimension " +
                     std::to_string(weights.n()) + " != " +
                     std::to_string(expected.n));
  }
  if (weights.c() != expected.c) {
    throw ShapeError("conv2d: weight input-channel dimension " +
                     std::to_string(weights.c()) + " != input channels / groups = " +
                     std::to_string(expected.c));
  }
  if (weights.h() != expected.h || weights.w() != expected.w) {
    throw ShapeError("conv2d: weight kernel dimensions " +
                     dims(weights.h(), weights.w()) + " != spec " +
                     dims(expected.h, expected.w));
  }
  if (!bias.empty() && static_cast<int>(bias.size()) != spec.out_channels) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) +
                     " != output channels " + std::to_string(spec.out_channels));
  }
  if (input.h() < spec.kernel_h || input.w() < spec.kernel_w) {
    throw ShapeError("conv2d: kernel " + dims(spec.kernel_h, spec.kernel_w) +
                     " larger than input " + dims(input.h(), input.w()));
  }
}

Shape conv_output_shape(const Tensor& input, const ConvSpec& spec) {
  return {input.n(), spec.out_channels,
          valid_extent(input.h(), spec.kernel_h, spec.stride),
          valid_extent(input.w(), spec.kernel_w, spec.stride)};
}

// Unfolds group `g` of batch item `b` into a (cin_g*kh*kw) x (oh*ow) matrix.
void im2col(const Tensor& input, int b, int g, int cin_g, const ConvSpec& spec,
            int oh, int ow, float* col) {
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  for (int ci = 0; ci < cin_g; ++ci) {
    const float* src = input.plane(b, g * cin_g + ci);
    for (int ky = 0; ky < spec.kernel_h; ++ky) {
      for (int kx = 0; kx < spec.kernel_w; ++kx) {
        float* row = col + ((static_cast<std::size_t>(ci) * spec.kernel_h + ky) *
                                spec.kernel_w + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const float* line =
              src + static_cast<std::size_t>(oy * spec.stride + ky) * input.w() + kx;
          float* dst = row + static_cast<std::size_t>(oy) * ow;
          if (spec.stride == 1) {
            std::copy(line, line + ow, dst);
          } else {
            for (int ox = 0; ox < ow; ++ox) dst[ox] = line[ox * spec.stride];
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, int b, int g, int cin_g, const ConvSpec& spec,
                int oh, int ow, Tensor& grad_input) {
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  for (int ci = 0; ci < cin_g; ++ci) {
    float* dst_plane = grad_input.plane(b, g * cin_g + ci);
    for (int ky = 0; ky < spec.kernel_h; ++ky) {
      for (int kx = 0; kx < spec.kernel_w; ++kx) {
        const float* row =
            col + ((static_cast<std::size_t>(ci) * spec.kernel_h + ky) *
                       spec.kernel_w + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          float* line = dst_plane +
                        static_cast<std::size_t>(oy * spec.stride + ky) *
                            grad_input.w() + kx;
          const float* src = row + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) line[ox * spec.stride] += src[ox];
        }
      }
    }
  }
}

void check_pool(const Tensor& input, int size, int stride) {
  if (size < 1 || stride < 1) {
    throw ConfigError("maxpool2d: size and stride must be positive");
  }
  if (input.h() < size || input.w() < size) {
    throw ShapeError("maxpool2d: window " + dims(size, size) +
                     " larger than input " + dims(input.h(), input.w()));
  }
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": gradient shape " + b.shape().str() +
                     " != expected " + a.shape().str());
  }
}

}  // namespace

Tensor conv2d_direct(const Tensor& input, const Tensor& weights,
                     std::span<const float> bias, const ConvSpec& spec) {
  check_conv(input, weights, bias, spec);
  Tensor out(conv_output_shape(input, spec));
  const int cin_g = input.c() / spec.groups;
  const int cout_g = spec.out_channels / spec.groups;
  for (int b = 0; b < out.n(); ++b) {
    for (int co = 0; co < out.c(); ++co) {
      const int g = co / cout_g;
      for (int oy = 0; oy < out.h(); ++oy) {
        for (int ox = 0; ox < out.w(); ++ox) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (int ci = 0; ci < cin_g; ++ci) {
            for (int ky = 0; ky < spec.kernel_h; ++ky) {
              for (int kx = 0; kx < spec.kernel_w; ++kx) {
                acc += static_cast<double>(weights.at(co, ci, ky, kx)) *
                       input.at(b, g * cin_g + ci, oy * spec.stride + ky,
                                ox * spec.stride + kx);
              }
            }
          }
          out.at(b, co, oy, ox) = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weights,
              std::span<const float> bias, const ConvSpec& spec) {
  check_conv(input, weights, bias, spec);
  Tensor out(conv_output_shape(input, spec));
  const int cin_g = input.c() / spec.groups;
  const int cout_g = spec.out_channels / spec.groups;
  const int oh = out.h();
  const int ow = out.w();
  const int k = cin_g * spec.kernel_h * spec.kernel_w;
  const int p = oh * ow;

  parallel_for(0, input.n(), [&](int b) {
    std::vector<float> col(static_cast<std::size_t>(k) * p);
    for (int g = 0; g < spec.groups; ++g) {
      im2col(input, b, g, cin_g, spec, oh, ow, col.data());
      ConstMapRM w(weights.data() + static_cast<std::size_t>(g) * cout_g * k,
                   cout_g, k);
      ConstMapRM c(col.data(), k, p);
      MapRM o(out.plane(b, g * cout_g), cout_g, p);
      o.noalias() = w * c;
      if (!bias.empty()) {
        for (int co = 0; co < cout_g; ++co) {
          o.row(co).array() += bias[g * cout_g + co];
        }
      }
    }
  });
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights,
                          const ConvSpec& spec, const Tensor& grad_output,
                          bool need_input_grad) {
  check_conv(input, weights, {}, spec);
  if (grad_output.shape() != conv_output_shape(input, spec)) {
    throw ShapeError("conv2d_backward: gradient shape " +
                     grad_output.shape().str() + " != output shape " +
                     conv_output_shape(input, spec).str());
  }
  const int n = input.n();
  const int cin_g = input.c() / spec.groups;
  const int cout_g = spec.out_channels / spec.groups;
  const int oh = grad_output.h();
  const int ow = grad_output.w();
  const int k = cin_g * spec.kernel_h * spec.kernel_w;
  const int p = oh * ow;

  ConvGrads grads;
  if (need_input_grad) grads.input = Tensor(input.shape());
  std::vector<Tensor> per_item(n, Tensor(weights.shape()));

  parallel_for(0, n, [&](int b) {
    std::vector<float> col(static_cast<std::size_t>(k) * p);
    for (int g = 0; g < spec.groups; ++g) {
      im2col(input, b, g, cin_g, spec, oh, ow, col.data());
      ConstMapRM dout(grad_output.plane(b, g * cout_g), cout_g, p);
      ConstMapRM c(col.data(), k, p);
      MapRM dw(per_item[b].data() + static_cast<std::size_t>(g) * cout_g * k,
               cout_g, k);
      dw.noalias() = dout * c.transpose();
      if (need_input_grad) {
        ConstMapRM w(weights.data() + static_cast<std::size_t>(g) * cout_g * k,
                     cout_g, k);
        MapRM dcol(col.data(), k, p);
        dcol.noalias() = w.transpose() * dout;
        col2im_add(col.data(), b, g, cin_g, spec, oh, ow, grads.input);
      }
    }
  });

  // Fixed-order reduction keeps the result independent of the thread count.
  grads.weights = Tensor(weights.shape());
  for (int b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < grads.weights.size(); ++i) {
      grads.weights.data()[i] += per_item[b].data()[i];
    }
  }
  grads.bias.assign(spec.out_channels, 0.0f);
  for (int co = 0; co < spec.out_channels; ++co) {
    double acc = 0.0;
    for (int b = 0; b < n; ++b) {
      const float* g = grad_output.plane(b, co);
      for (int i = 0; i < p; ++i) acc += g[i];
    }
    grads.bias[co] = static_cast<float>(acc);
  }
  return grads;
}

Tensor maxpool2d(const Tensor& input, int size, int stride) {
  check_pool(input, size, stride);
  Tensor out({input.n(), input.c(), valid_extent(input.h(), size, stride),
              valid_extent(input.w(), size, stride)});
  parallel_for(0, input.n() * input.c(), [&](int bc) {
    const int b = bc / input.c();
    const int c = bc % input.c();
    const float* src = input.plane(b, c);
    float* dst = out.plane(b, c);
    for (int oy = 0; oy < out.h(); ++oy) {
      for (int ox = 0; ox < out.w(); ++ox) {
        float best = src[static_cast<std::size_t>(oy * stride) * input.w() + ox * stride];
        for (int ky = 0; ky < size; ++ky) {
          const float* line =
              src + static_cast<std::size_t>(oy * stride + ky) * input.w() + ox * stride;
          for (int kx = 0; kx < size; ++kx) best = std::max(best, line[kx]);
        }
        dst[static_cast<std::size_t>(oy) * out.w() + ox] = best;
      }
    }
  });
  return out;
}

Tensor maxpool2d_backward(const Tensor& input, int size, int stride,
                          const Tensor& grad_output) {
  check_pool(input, size, stride);
  const Shape out_shape{input.n(), input.c(), valid_extent(input.h(), size, stride),
                        valid_extent(input.w(), size, stride)};
  if (grad_output.shape() != out_shape) {
    throw ShapeError("maxpool2d_backward: gradient shape " +
                     grad_output.shape().str() + " != output shape " +
                     out_shape.str());
  }
  Tensor grad(input.shape());
  parallel_for(0, input.n() * input.c(), [&](int bc) {
    const int b = bc / input.c();
    const int c = bc % input.c();
    const float* src = input.plane(b, c);
    const float* gout = grad_output.plane(b, c);
    float* gin = grad.plane(b, c);
    for (int oy = 0; oy < out_shape.h; ++oy) {
      for (int ox = 0; ox < out_shape.w; ++ox) {
        std::size_t best_at =
            static_cast<std::size_t>(oy * stride) * input.w() + ox * stride;
        float best = src[best_at];
        for (int ky = 0; ky < size; ++ky) {
          for (int kx = 0; kx < size; ++kx) {
            const std::size_t at =
                static_cast<std::size_t>(oy * stride + ky) * input.w() +
                ox * stride + kx;
            if (src[at] > best) {
              best = src[at];
              best_at = at;
            }
          }
        }
        gin[best_at] += gout[static_cast<std::size_t>(oy) * out_shape.w + ox];
      }
    }
  });
  return grad;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    out.data()[i] = std::max(0.0f, input.data()[i]);
  }
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  check_same_shape("relu_backward", input, grad_output);
  Tensor grad(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    grad.data()[i] = input.data()[i] > 0.0f ? grad_output.data()[i] : 0.0f;
  }
  return grad;
}

BatchNormParams BatchNormParams::identity(int channels) {
  BatchNormParams p;
  p.gamma.assign(channels, 1.0f);
  p.beta.assign(channels, 0.0f);
  p.running_mean.assign(channels, 0.0f);
  p.running_var.assign(channels, 1.0f);
  return p;
}

namespace {
void check_bn(const Tensor& input, const BatchNormParams& params) {
  const auto c = static_cast<std::size_t>(input.c());
  if (params.gamma.size() != c || params.beta.size() != c ||
      params.running_mean.size() != c || params.running_var.size() != c) {
    throw ShapeError("batchnorm: parameter length " +
                     std::to_string(params.gamma.size()) +
                     " != input channels " + std::to_string(c));
  }
}
}  // namespace

Tensor batchnorm_infer(const Tensor& input, const BatchNormParams& params) {
  check_bn(input, params);
  Tensor out(input.shape());
  const std::size_t plane = input.shape().plane();
  for (int c = 0; c < input.c(); ++c) {
    const float scale =
        params.gamma[c] / std::sqrt(params.running_var[c] + params.eps);
    const float shift = params.beta[c] - params.running_mean[c] * scale;
    for (int b = 0; b < input.n(); ++b) {
      const float* src = input.plane(b, c);
      float* dst = out.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * scale + shift;
    }
  }
  return out;
}

Tensor batchnorm(const Tensor& input, BatchNormParams& params, Mode mode,
                 BatchNormCache* cache) {
  if (mode == Mode::Infer) return batchnorm_infer(input, params);
  check_bn(input, params);
  const std::size_t plane = input.shape().plane();
  const std::size_t count = plane * input.n();
  if (count < 2) {
    throw ShapeError("batchnorm: train mode needs at least 2 values per channel, got " +
                     std::to_string(count));
  }

  Tensor out(input.shape());
  BatchNormCache local;
  BatchNormCache& saved = cache ? *cache : local;
  saved.mean.assign(input.c(), 0.0f);
  saved.inv_std.assign(input.c(), 0.0f);
  saved.normalized = Tensor(input.shape());

  for (int c = 0; c < input.c(); ++c) {
    double sum = 0.0;
    for (int b = 0; b < input.n(); ++b) {
      const float* src = input.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) sum += src[i];
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (int b = 0; b < input.n(); ++b) {
      const float* src = input.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = src[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(count);
    const double inv_std = 1.0 / std::sqrt(var + params.eps);
    saved.mean[c] = static_cast<float>(mean);
    saved.inv_std[c] = static_cast<float>(inv_std);

    for (int b = 0; b < input.n(); ++b) {
      const float* src = input.plane(b, c);
      float* xhat = saved.normalized.plane(b, c);
      float* dst = out.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[i] = static_cast<float>((src[i] - mean) * inv_std);
        dst[i] = params.gamma[c] * xhat[i] + params.beta[c];
      }
    }

    const double unbiased = sq / static_cast<double>(count - 1);
    params.running_mean[c] = static_cast<float>(
        (1.0 - params.momentum) * params.running_mean[c] + params.momentum * mean);
    params.running_var[c] = static_cast<float>(
        (1.0 - params.momentum) * params.running_var[c] + params.momentum * unbiased);
  }
  return out;
}

BatchNormGrads batchnorm_backward(const BatchNormParams& params,
                                  const BatchNormCache& cache,
                                  const Tensor& grad_output) {
  const Tensor& xhat = cache.normalized;
  if (xhat.empty() || cache.mean.empty()) {
    throw ConfigError("batchnorm_backward: missing saved forward state");
  }
  check_same_shape("batchnorm_backward", xhat, grad_output);
  const std::size_t plane = xhat.shape().plane();
  const double count = static_cast<double>(plane * xhat.n());

  BatchNormGrads grads;
  grads.input = Tensor(xhat.shape());
  grads.gamma.assign(xhat.c(), 0.0f);
  grads.beta.assign(xhat.c(), 0.0f);
  for (int c = 0; c < xhat.c(); ++c) {
    double dgamma = 0.0;
    double dbeta = 0.0;
    for (int b = 0; b < xhat.n(); ++b) {
      const float* g = grad_output.plane(b, c);
      const float* xh = xhat.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) {
        dgamma += static_cast<double>(g[i]) * xh[i];
        dbeta += g[i];
      }
    }
    grads.gamma[c] = static_cast<float>(dgamma);
    grads.beta[c] = static_cast<float>(dbeta);
    const double k = params.gamma[c] * cache.inv_std[c] / count;
    for (int b = 0; b < xhat.n(); ++b) {
      const float* g = grad_output.plane(b, c);
      const float* xh = xhat.plane(b, c);
      float* dx = grads.input.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) {
        dx[i] = static_cast<float>(k * (count * g[i] - dbeta - xh[i] * dgamma));
      }
    }
  }
  return grads;
}

namespace {
void check_xcorr(const Tensor& exemplar, const Tensor& search) {
  if (exemplar.c() != search.c()) {
    throw ShapeError("xcorr: exemplar channels " + std::to_string(exemplar.c()) +
                     " != search channels " + std::to_string(search.c()));
  }
  if (exemplar.n() != 1 && exemplar.n() != search.n()) {
    throw ShapeError("xcorr: exemplar batch " + std::to_string(exemplar.n()) +
                     " must be 1 or match search batch " +
                     std::to_string(search.n()));
  }
  if (exemplar.h() > search.h() || exemplar.w() > search.w()) {
    throw ShapeError("xcorr: exemplar " + dims(exemplar.h(), exemplar.w()) +
                     " larger than search " + dims(search.h(), search.w()));
  }
}
}  // namespace

Tensor xcorr(const Tensor& exemplar, const Tensor& search) {
  check_xcorr(exemplar, search);
  const int oh = search.h() - exemplar.h() + 1;
  const int ow = search.w() - exemplar.w() + 1;
  Tensor out({search.n(), 1, oh, ow});
  parallel_for(0, search.n(), [&](int b) {
    const int zb = exemplar.n() == 1 ? 0 : b;
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (int c = 0; c < search.c(); ++c) {
          const float* z = exemplar.plane(zb, c);
          const float* x = search.plane(b, c);
          for (int a = 0; a < exemplar.h(); ++a) {
            const float* zr = z + static_cast<std::size_t>(a) * exemplar.w();
            const float* xr = x + static_cast<std::size_t>(i + a) * search.w() + j;
            float row = 0.0f;
            for (int q = 0; q < exemplar.w(); ++q) row += zr[q] * xr[q];
            acc += row;
          }
        }
        out.at(b, 0, i, j) = static_cast<float>(acc);
      }
    }
  });
  return out;
}

XcorrGrads xcorr_backward(const Tensor& exemplar, const Tensor& search,
                          const Tensor& grad_output) {
  check_xcorr(exemplar, search);
  const int oh = search.h() - exemplar.h() + 1;
  const int ow = search.w() - exemplar.w() + 1;
  const Shape out_shape{search.n(), 1, oh, ow};
  if (grad_output.shape() != out_shape) {
    throw ShapeError("xcorr_backward: gradient shape " +
                     grad_output.shape().str() + " != output shape " +
                     out_shape.str());
  }
  XcorrGrads grads{Tensor(exemplar.shape()), Tensor(search.shape())};
  // Per-item exemplar gradients, summed in batch order when the exemplar is shared.
  std::vector<Tensor> dz_items(search.n());
  parallel_for(0, search.n(), [&](int b) {
    const int zb = exemplar.n() == 1 ? 0 : b;
    Tensor dz({1, exemplar.c(), exemplar.h(), exemplar.w()});
    for (int c = 0; c < search.c(); ++c) {
      const float* z = exemplar.plane(zb, c);
      const float* x = search.plane(b, c);
      float* dzp = dz.plane(0, c);
      float* dx = grads.search.plane(b, c);
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          const float g = grad_output.at(b, 0, i, j);
          if (g == 0.0f) continue;
          for (int a = 0; a < exemplar.h(); ++a) {
            const float* zr = z + static_cast<std::size_t>(a) * exemplar.w();
            const float* xr = x + static_cast<std::size_t>(i + a) * search.w() + j;
            float* dzr = dzp + static_cast<std::size_t>(a) * exemplar.w();
            float* dxr = dx + static_cast<std::size_t>(i + a) * search.w() + j;
            for (int q = 0; q < exemplar.w(); ++q) {
              dzr[q] += g * xr[q];
              dxr[q] += g * zr[q];
            }
          }
        }
      }
    }
    dz_items[b] = std::move(dz);
  });
  const std::size_t item = static_cast<std::size_t>(exemplar.c()) *
                           exemplar.shape().plane();
  for (int b = 0; b < search.n(); ++b) {
    float* dst = grads.exemplar.data() + (exemplar.n() == 1 ? 0 : b * item);
    const float* src = dz_items[b].data();
    for (std::size_t i = 0; i < item; ++i) dst[i] += src[i];
  }
  return grads;
}

}  // namespace siamfc
