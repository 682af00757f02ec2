#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "siamfc/tensor.hpp"

namespace siamfc {

/// RGB image with float samples in [0, 255], interleaved row-major (y, x, c).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  static constexpr int kChannels = 3;

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * kChannels, fill) {}

  bool empty() const { return pixels.empty(); }
  float& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * kChannels + c];
  }
  float at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * kChannels + c];
  }

  std::array<float, 3> mean_rgb() const;
};

Image read_png(const std::filesystem::path& path);

/// Writes 8-bit RGB; samples are rounded and clamped to [0, 255].
void write_png(const Image& image, const std::filesystem::path& path);

/// Rounds every sample to the 8-bit value write_png would store.
Image quantized(Image image);

/// Luma (BT.601 weights) replicated into all three channels.
Image to_grayscale(const Image& image);

/// (1, 3, h, w) planar tensor scaled to [0, 1].
Tensor to_tensor(const Image& image);
Tensor to_batch(std::span<const Image> images);

}  // namespace siamfc
