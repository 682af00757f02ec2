#include "siamfc/score_map.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "siamfc/error.hpp"

namespace siamfc {

ScoreMap ScoreMap::centered(Grid2D grid, double stride) {
  ScoreMap map;
  map.origin_y = -0.5 * (grid.height - 1) * stride;
  map.origin_x = -0.5 * (grid.width - 1) * stride;
  map.stride_y = stride;
  map.stride_x = stride;
  map.grid = std::move(grid);
  return map;
}

ScoreMap score_map_from(const Tensor& scores, int index, double stride) {
  if (scores.c() != 1 || index < 0 || index >= scores.n()) {
    throw ShapeError("score_map_from: cannot take item " + std::to_string(index) +
                     " of " + scores.shape().str());
  }
  Grid2D grid(scores.h(), scores.w());
  std::copy_n(scores.plane(index, 0), grid.values.size(), grid.values.begin());
  return ScoreMap::centered(std::move(grid), stride);
}

double keys_cubic(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

namespace {

struct Taps {
  int index[4];
  double weight[4];
};

struct Axis {
  std::vector<Taps> taps;
  double origin = 0.0;
  double stride = 1.0;
};

// Output samples 1/f apart (f = out / in), placed so the output cell nearest
// the pixel-centre image of the zero-displacement point samples it exactly.
Axis cubic_axis(int in, int out, double origin, double stride) {
  Axis a;
  const double f = static_cast<double>(out) / in;
  const double zero = -origin / stride;  // raw index of zero displacement
  const double centre = std::floor((zero + 0.5) * f - 0.5 + 1e-9);
  a.taps.resize(out);
  for (int j = 0; j < out; ++j) {
    const double src = zero + (j - centre) / f;
    const double base = std::floor(src);
    const double t = src - base;
    for (int k = 0; k < 4; ++k) {
      const int raw = static_cast<int>(base) - 1 + k;
      a.taps[j].index[k] = std::clamp(raw, 0, in - 1);
      a.taps[j].weight[k] = keys_cubic(t - (k - 1));
    }
  }
  a.stride = stride / f;
  a.origin = -centre * a.stride;
  return a;
}

}  // namespace

ScoreMap bicubic_upsample(const ScoreMap& map, int out_h, int out_w) {
  const int in_h = map.height();
  const int in_w = map.width();
  if (in_h < 1 || in_w < 1) throw ShapeError("bicubic_upsample: empty map");
  if (out_h < in_h || out_w < in_w) {
    throw ShapeError("bicubic_upsample: downscaling " + std::to_string(in_h) +
                     "x" + std::to_string(in_w) + " to " + std::to_string(out_h) +
                     "x" + std::to_string(out_w) + " is not supported");
  }
  const Axis ay = cubic_axis(in_h, out_h, map.origin_y, map.stride_y);
  const Axis ax = cubic_axis(in_w, out_w, map.origin_x, map.stride_x);
  const auto& ty = ay.taps;
  const auto& tx = ax.taps;

  // Horizontal pass into (in_h x out_w), then vertical pass.
  std::vector<double> rows(static_cast<std::size_t>(in_h) * out_w);
  for (int y = 0; y < in_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += tx[x].weight[k] * map(y, tx[x].index[k]);
      rows[static_cast<std::size_t>(y) * out_w + x] = acc;
    }
  }
  ScoreMap out;
  out.grid = Grid2D(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) {
        acc += ty[y].weight[k] * rows[static_cast<std::size_t>(ty[y].index[k]) * out_w + x];
      }
      out.grid(y, x) = static_cast<float>(acc);
    }
  }

  out.stride_y = ay.stride;
  out.stride_x = ax.stride;
  out.origin_y = ay.origin;
  out.origin_x = ax.origin;
  return out;
}

std::vector<double> hann(int n) {
  if (n < 1) throw ConfigError("hann: length must be positive");
  // Zero end-points dropped, so every tap is positive and n == 1 gives {1}.
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 1) / (n + 1));
  }
  return w;
}

Grid2D cosine_window(int h, int w) {
  const auto wy = hann(h);
  const auto wx = hann(w);
  double total = 0.0;
  for (double a : wy) {
    for (double b : wx) total += a * b;
  }
  Grid2D grid(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) grid(y, x) = static_cast<float>(wy[y] * wx[x] / total);
  }
  return grid;
}

}  // namespace siamfc
