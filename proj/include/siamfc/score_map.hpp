#pragma once

#include <vector>

#include "siamfc/tensor.hpp"

namespace siamfc {

/// Row-major 2-d grid of floats.
struct Grid2D {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Grid2D() = default;
  Grid2D(int h, int w, float fill = 0.0f)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  float& operator()(int y, int x) {
    return values[static_cast<std::size_t>(y) * width + x];
  }
  float operator()(int y, int x) const {
    return values[static_cast<std::size_t>(y) * width + x];
  }
};

/// Similarity scores over a grid of translations.
///
/// Cell (i, j) stands for the displacement
/// (origin_y + i * stride_y, origin_x + j * stride_x), measured in pixels of
/// the search crop relative to its centre.
struct ScoreMap {
  Grid2D grid;
  double stride_y = 1.0;
  double stride_x = 1.0;
  double origin_y = 0.0;
  double origin_x = 0.0;

  int height() const { return grid.height; }
  int width() const { return grid.width; }
  float operator()(int y, int x) const { return grid(y, x); }

  double displacement_y(int i) const { return origin_y + i * stride_y; }
  double displacement_x(int j) const { return origin_x + j * stride_x; }

  /// Map centred on zero displacement with cells `stride` pixels apart.
  static ScoreMap centered(Grid2D grid, double stride);
};

/// Extracts batch item `index` of a (N, 1, H, W) score tensor as a centred map.
ScoreMap score_map_from(const Tensor& scores, int index, double stride);

/// Keys bicubic interpolation (a = -0.5) with clamped borders. Output cells
/// are out/in times denser and placed so one of them samples zero
/// displacement exactly: for 17 -> 272 that is cell 135, the lower of the two
/// cells straddling the pixel-centre image of the raw centre. Every output
/// cell names the displacement it samples. Throws on a downscaling request.
ScoreMap bicubic_upsample(const ScoreMap& map, int out_h, int out_w);

/// Keys cubic convolution kernel with a = -0.5.
double keys_cubic(double t);

/// Outer product of symmetric 1-d Hann windows, normalized to sum 1.
Grid2D cosine_window(int h, int w);

/// Unnormalized symmetric Hann window of length n without the zero end-points.
std::vector<double> hann(int n);

}  // namespace siamfc
