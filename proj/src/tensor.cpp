#include "siamfc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "siamfc/error.hpp"

namespace siamfc {

std::string Shape::str() const {
  std::ostringstream out;
  out << n << "x" << c << "x" << h << "x" << w;
  return out.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor dimension in " + shape.str());
  }
  data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.str());
  }
}

Tensor Tensor::batch_slice(int first, int count) const {
  if (first < 0 || count < 0 || first + count > shape_.n) {
    throw ShapeError("batch slice [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") outside " +
                     shape_.str());
  }
  Shape out_shape{count, shape_.c, shape_.h, shape_.w};
  const std::size_t item = static_cast<std::size_t>(shape_.c) * shape_.plane();
  std::vector<float> out(data_.begin() + first * item,
                         data_.begin() + (first + count) * item);
  return Tensor(out_shape, std::move(out));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != shape_.numel()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(shape, data_);
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  const Shape first = parts.front().shape();
  int total = 0;
  for (const auto& p : parts) {
    if (p.c() != first.c || p.h() != first.h || p.w() != first.w) {
      throw ShapeError("concat_batch: " + p.shape().str() +
                       " does not match " + first.str());
    }
    total += p.n();
  }
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(total) * first.c * first.plane());
  for (const auto& p : parts) {
    data.insert(data.end(), p.values().begin(), p.values().end());
  }
  return Tensor({total, first.c, first.h, first.w}, std::move(data));
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](float v) { return std::isfinite(v); });
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + a.shape().str() + " vs " +
                     b.shape().str());
  }
  float worst = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  }
  return worst;
}

}  // namespace siamfc
