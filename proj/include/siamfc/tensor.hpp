#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace siamfc {

/// Dimensions of a 4-d tensor in (batch, channels, height, width) order.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense float32 tensor, contiguous and row-major in (n, c, h, w).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  std::size_t index(int b, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(b) * shape_.c + ch) * shape_.h + y) *
               shape_.w +
           x;
  }
  float& at(int b, int ch, int y, int x) { return data_[index(b, ch, y, x)]; }
  float at(int b, int ch, int y, int x) const {
    return data_[index(b, ch, y, x)];
  }

  /// Pointer to the (b, ch) spatial plane.
  float* plane(int b, int ch) { return data_.data() + index(b, ch, 0, 0); }
  const float* plane(int b, int ch) const {
    return data_.data() + index(b, ch, 0, 0);
  }

  /// Copy of batch items [first, first + count).
  Tensor batch_slice(int first, int count = 1) const;

  /// Same data viewed under a different shape of equal element count.
  Tensor reshaped(Shape shape) const;

  void fill(float value);

 private:
  Shape shape_{};
  std::vector<float> data_;
};

/// Stacks tensors of identical (c, h, w) along the batch axis.
Tensor concat_batch(std::span<const Tensor> parts);

bool all_finite(const Tensor& t);

/// Largest absolute elementwise difference; shapes must match.
float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace siamfc
