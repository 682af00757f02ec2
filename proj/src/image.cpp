#include "siamfc/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "siamfc/error.hpp"

namespace siamfc {

std::array<float, 3> Image::mean_rgb() const {
  std::array<double, 3> sum{0.0, 0.0, 0.0};
  const std::size_t count = static_cast<std::size_t>(width) * height;
  for (std::size_t i = 0; i < count; ++i) {
    for (int c = 0; c < kChannels; ++c) sum[c] += pixels[i * kChannels + c];
  }
  std::array<float, 3> mean{};
  for (int c = 0; c < kChannels; ++c) {
    mean[c] = count ? static_cast<float>(sum[c] / static_cast<double>(count)) : 0.0f;
  }
  return mean;
}

Image read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  Image image(static_cast<int>(png.width), static_cast<int>(png.height));
  std::transform(buffer.begin(), buffer.end(), image.pixels.begin(),
                 [](png_byte b) { return static_cast<float>(b); });
  return image;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  if (image.empty()) throw IoError("refusing to write empty image " + path.string());
  std::vector<png_byte> buffer(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), buffer.begin(), [](float v) {
    return static_cast<png_byte>(std::clamp(std::lround(v), 0L, 255L));
  });
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

Image quantized(Image image) {
  for (float& v : image.pixels) v = static_cast<float>(std::clamp(std::lround(v), 0L, 255L));
  return image;
}

Image to_grayscale(const Image& image) {
  Image gray = image;
  const std::size_t count = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t i = 0; i < count; ++i) {
    const float* p = &image.pixels[i * Image::kChannels];
    const float y = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
    for (int c = 0; c < Image::kChannels; ++c) gray.pixels[i * Image::kChannels + c] = y;
  }
  return gray;
}

Tensor to_tensor(const Image& image) {
  Tensor t({1, Image::kChannels, image.height, image.width});
  for (int c = 0; c < Image::kChannels; ++c) {
    float* plane = t.plane(0, c);
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        plane[static_cast<std::size_t>(y) * image.width + x] = image.at(x, y, c) / 255.0f;
      }
    }
  }
  return t;
}

Tensor to_batch(std::span<const Image> images) {
  std::vector<Tensor> parts;
  parts.reserve(images.size());
  for (const auto& img : images) parts.push_back(to_tensor(img));
  return concat_batch(parts);
}

}  // namespace siamfc
