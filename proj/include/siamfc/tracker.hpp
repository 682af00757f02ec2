#pragma once

#include <functional>
#include <span>
#include <vector>

#include "siamfc/curation.hpp"
#include "siamfc/image.hpp"
#include "siamfc/net.hpp"
#include "siamfc/score_map.hpp"

namespace siamfc {

struct TrackerConfig {
  int num_scales = 5;
  double scale_step = 1.025;
  double scale_damp = 0.35;
  double window_weight = 0.176;   // lambda
  double scale_penalty = 0.9745;  // applied to non-central scales
  int upsample_to = 272;
  /// Limits on the target size relative to the initial box.
  double min_scale = 0.2;
  double max_scale = 5.0;
  CropSpec crop;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
  /// scale_step^i for i = -(n-1)/2 .. (n-1)/2.
  std::vector<double> scale_factors() const;
};

struct TrackerState {
  Tensor exemplar_features;
  BoundingBox box;
  BoundingBox initial_box;
  /// Target size relative to the initial box; the aspect ratio never changes.
  double scale = 1.0;
  TrackerConfig config;
};

/// s * ((1 - damp) + damp * chosen_step).
double damp_scale(double scale, double chosen_step, double damp);

/// Index of the winning scale given raw per-scale maxima. Non-central maxima
/// are multiplied by `penalty`; the central scale wins ties, then the lower
/// index.
int select_scale(std::span<const float> maxima, double penalty);

/// (map - min) / sum(map - min), mixed as (1 - lambda) * map + lambda * window.
/// A map flat to within 1e-5 relative counts as uniform.
Grid2D mix_window(const Grid2D& map, const Grid2D& window, double lambda);

struct Peak {
  int y = 0;
  int x = 0;
};

/// Argmax; ties go to the cell with the smallest displacement, then row-major.
Peak response_argmax(const ScoreMap& response);

/// Per-step internals, for inspection.
struct StepInfo {
  int chosen_scale = 0;
  double chosen_factor = 1.0;
  Peak peak;
  double displacement_y = 0.0;  // search-crop pixels
  double displacement_x = 0.0;
};

TrackerState tracker_init(const SiameseModel& model, const Image& frame, const BoundingBox& box,
                          const TrackerConfig& config = {});

/// Locates the target in `frame` and updates `state` (box and scale only).
BoundingBox tracker_step(const SiameseModel& model, TrackerState& state, const Image& frame,
                         StepInfo* info = nullptr);

/// Tracks through a sequence; returns one box per frame, the first being
/// `init_box`.
std::vector<BoundingBox> track(const SiameseModel& model, std::span<const Image> frames,
                               const BoundingBox& init_box, const TrackerConfig& config = {});

using FrameSource = std::function<Image(int)>;

std::vector<BoundingBox> track(const SiameseModel& model, int frame_count,
                               const FrameSource& frames, const BoundingBox& init_box,
                               const TrackerConfig& config = {});

/// Anything that can be (re)initialized on a box and then follow it.
class SequenceTracker {
 public:
  virtual ~SequenceTracker() = default;
  virtual void initialize(const Image& frame, const BoundingBox& box) = 0;
  virtual BoundingBox update(const Image& frame) = 0;
};

class SiamFCTracker : public SequenceTracker {
 public:
  SiamFCTracker(const SiameseModel& model, TrackerConfig config = {});

  void initialize(const Image& frame, const BoundingBox& box) override;
  BoundingBox update(const Image& frame) override;
  const TrackerState& state() const { return state_; }

 private:
  const SiameseModel& model_;
  TrackerConfig config_;
  TrackerState state_;
};

}  // namespace siamfc
