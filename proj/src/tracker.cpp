#include "siamfc/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "siamfc/error.hpp"

namespace siamfc {

void TrackerConfig::validate() const {
  if (num_scales < 1 || num_scales % 2 == 0) throw ConfigError("num_scales must be odd and >= 1");
  if (!(scale_step > 1.0)) throw ConfigError("scale_step must be > 1");
  if (scale_damp < 0.0 || scale_damp > 1.0) throw ConfigError("scale_damp must lie in [0, 1]");
  if (window_weight < 0.0 || window_weight >= 1.0) {
    throw ConfigError("window_weight must lie in [0, 1)");
  }
  if (!(scale_penalty > 0.0) || scale_penalty > 1.0) {
    throw ConfigError("scale_penalty must lie in (0, 1]");
  }
  if (upsample_to < 1) throw ConfigError("upsample_to must be positive");
  if (!(min_scale > 0.0) || max_scale < min_scale) {
    throw ConfigError("scale limits must satisfy 0 < min_scale <= max_scale");
  }
}

std::vector<double> TrackerConfig::scale_factors() const {
  std::vector<double> factors;
  const int half = num_scales / 2;
  for (int i = -half; i <= half; ++i) factors.push_back(std::pow(scale_step, i));
  return factors;
}

double damp_scale(double scale, double chosen_step, double damp) {
  return scale * ((1.0 - damp) + damp * chosen_step);
}

int select_scale(std::span<const float> maxima, double penalty) {
  if (maxima.empty()) throw ConfigError("select_scale: no scales");
  const int center = static_cast<int>(maxima.size()) / 2;
  int best = center;
  double best_value = maxima[center];
  for (int i = 0; i < static_cast<int>(maxima.size()); ++i) {
    if (i == center) continue;
    const double v = penalty * maxima[i];
    if (v > best_value) {
      best_value = v;
      best = i;
    }
  }
  return best;
}

Grid2D mix_window(const Grid2D& map, const Grid2D& window, double lambda) {
  if (map.height != window.height || map.width != window.width) {
    throw ShapeError("mix_window: window is " + std::to_string(window.height) + "x" +
                     std::to_string(window.width) + ", map " + std::to_string(map.height) +
                     "x" + std::to_string(map.width));
  }
  const auto [lo_it, hi_it] = std::minmax_element(map.values.begin(), map.values.end());
  const float lo = *lo_it;
  double sum = 0.0;
  for (float v : map.values) sum += v - lo;
  // Rounding noise on a flat map must not be stretched to full scale.
  const bool flat = *hi_it - lo <= 1e-5f * std::max(1.0f, std::abs(lo));
  Grid2D out(map.height, map.width);
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    const double r = flat ? 1.0 / map.values.size() : (map.values[i] - lo) / sum;
    out.values[i] = static_cast<float>((1.0 - lambda) * r + lambda * window.values[i]);
  }
  return out;
}

Peak response_argmax(const ScoreMap& response) {
  Peak best;
  float best_value = -std::numeric_limits<float>::infinity();
  double best_dist = std::numeric_limits<double>::infinity();
  for (int y = 0; y < response.height(); ++y) {
    const double dy = response.displacement_y(y);
    for (int x = 0; x < response.width(); ++x) {
      const float v = response(y, x);
      const double dx = response.displacement_x(x);
      const double dist = dy * dy + dx * dx;
      if (v > best_value || (v == best_value && dist < best_dist)) {
        best_value = v;
        best_dist = dist;
        best = {y, x};
      }
    }
  }
  return best;
}

namespace {

BoundingBox sized_box(const BoundingBox& initial, double cx, double cy, double scale) {
  return {cx, cy, initial.w * scale, initial.h * scale};
}

}  // namespace

TrackerState tracker_init(const SiameseModel& model, const Image& frame, const BoundingBox& box,
                          const TrackerConfig& config) {
  config.validate();
  if (!box.valid() || !std::isfinite(box.cx) || !std::isfinite(box.cy)) {
    throw ConfigError("tracker_init: degenerate box");
  }
  if (frame.empty()) throw ConfigError("tracker_init: empty frame");
  const Image crop = extract_crop(frame, box.cx, box.cy, exemplar_window(box, config.crop),
                                  config.crop.exemplar_side);
  TrackerState state;
  state.exemplar_features = embed(model.net, to_tensor(crop));
  state.box = box;
  state.initial_box = box;
  state.scale = 1.0;
  state.config = config;
  return state;
}

BoundingBox tracker_step(const SiameseModel& model, TrackerState& state, const Image& frame,
                         StepInfo* info) {
  const TrackerConfig& cfg = state.config;
  const std::vector<double> factors = cfg.scale_factors();
  const BoundingBox& box = state.box;
  const double s = crop_scale(box, cfg.crop);
  const double window = search_window(box, cfg.crop);
  const auto fill = frame.mean_rgb();

  std::vector<Image> crops;
  crops.reserve(factors.size());
  for (double f : factors) {
    crops.push_back(extract_crop(frame, box.cx, box.cy, window * f, cfg.crop.search_side, fill));
  }
  const Tensor features = embed(model.net, to_batch(crops));
  Tensor scores = xcorr(state.exemplar_features, features);
  for (float& v : scores.values()) v += model.bias.b;
  if (!all_finite(scores)) throw NumericError("tracker_step: non-finite scores");

  std::vector<float> maxima(factors.size());
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const float* p = scores.plane(static_cast<int>(i), 0);
    maxima[i] = *std::max_element(p, p + scores.shape().plane());
  }
  const int chosen = select_scale(maxima, cfg.scale_penalty);

  const ScoreMap raw = score_map_from(scores, chosen, model.net.total_stride());
  ScoreMap response = bicubic_upsample(raw, cfg.upsample_to, cfg.upsample_to);
  response.grid = mix_window(response.grid, cosine_window(cfg.upsample_to, cfg.upsample_to),
                             cfg.window_weight);
  const Peak peak = response_argmax(response);
  const double dy = response.displacement_y(peak.y);
  const double dx = response.displacement_x(peak.x);

  // Search-crop pixels to image pixels at the chosen scale.
  const double to_image = factors[chosen] / s;
  const double cx = std::clamp(box.cx + dx * to_image, 0.0, static_cast<double>(frame.width));
  const double cy = std::clamp(box.cy + dy * to_image, 0.0, static_cast<double>(frame.height));
  state.scale = std::clamp(damp_scale(state.scale, factors[chosen], cfg.scale_damp),
                           cfg.min_scale, cfg.max_scale);
  state.box = sized_box(state.initial_box, cx, cy, state.scale);

  if (info) {
    info->chosen_scale = chosen;
    info->chosen_factor = factors[chosen];
    info->peak = peak;
    info->displacement_y = dy;
    info->displacement_x = dx;
  }
  return state.box;
}

std::vector<BoundingBox> track(const SiameseModel& model, int frame_count,
                               const FrameSource& frames, const BoundingBox& init_box,
                               const TrackerConfig& config) {
  if (frame_count < 1) throw ConfigError("track: need at least one frame");
  std::vector<BoundingBox> boxes{init_box};
  TrackerState state = tracker_init(model, frames(0), init_box, config);
  for (int i = 1; i < frame_count; ++i) boxes.push_back(tracker_step(model, state, frames(i)));
  return boxes;
}

std::vector<BoundingBox> track(const SiameseModel& model, std::span<const Image> frames,
                               const BoundingBox& init_box, const TrackerConfig& config) {
  return track(model, static_cast<int>(frames.size()),
               [&](int i) { return frames[static_cast<std::size_t>(i)]; }, init_box, config);
}

SiamFCTracker::SiamFCTracker(const SiameseModel& model, TrackerConfig config)
    : model_(model), config_(std::move(config)) {
  config_.validate();
}

void SiamFCTracker::initialize(const Image& frame, const BoundingBox& box) {
  state_ = tracker_init(model_, frame, box, config_);
}

BoundingBox SiamFCTracker::update(const Image& frame) {
  return tracker_step(model_, state_, frame);
}

}  // namespace siamfc
