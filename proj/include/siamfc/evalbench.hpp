#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "siamfc/curation.hpp"
#include "siamfc/tracker.hpp"
#include "siamfc/training.hpp"

namespace siamfc {

/// Intersection over union; 0 when either box is degenerate.
double iou(const BoundingBox& a, const BoundingBox& b);

/// 0, 0.05, ..., 1.
std::vector<double> default_thresholds();

struct SuccessCurve {
  std::vector<double> thresholds;
  std::vector<double> success_rates;
  double auc = 0.0;
};

/// Success rate at t is the fraction of frames with IoU > t; AUC is the mean
/// rate over the grid.
SuccessCurve success_curve(std::span<const double> ious, std::span<const double> thresholds);
SuccessCurve ope(std::span<const BoundingBox> predictions,
                 std::span<const BoundingBox> ground_truth,
                 std::span<const double> thresholds);
SuccessCurve ope(std::span<const BoundingBox> predictions,
                 std::span<const BoundingBox> ground_truth);

enum class FrameStatus : std::uint8_t { Init, Tracked, Failure, Skipped };

const char* to_string(FrameStatus status);

struct VotResult {
  double accuracy = 0.0;  // mean IoU over Tracked and Failure frames
  int failures = 0;
  int counted_frames = 0;
  std::vector<double> overlaps;  // IoU per frame, 0 where not tracked
  std::vector<FrameStatus> status;
};

struct VotConfig {
  /// A failure on frame f re-initializes the tracker on frame f + reinit_delay;
  /// frames in between and the re-init frame are excluded from accuracy.
  int reinit_delay = 5;
};

/// Tracks with re-initialization from ground truth after every failure
/// (IoU = 0).
VotResult vot_run(SequenceTracker& tracker, int frame_count, const FrameSource& frames,
                  std::span<const BoundingBox> ground_truth, const VotConfig& config = {});

/// Frames of an annotated sequence read from disk, with the track of one
/// object.
struct EvalSequence {
  std::string video_id;
  int object_id = 0;
  std::vector<std::filesystem::path> frame_files;
  std::vector<BoundingBox> ground_truth;

  static EvalSequence from_annotation(const SequenceAnnotation& seq, int object_id);
  static EvalSequence from_annotation(const SequenceAnnotation& seq);  // first object
  FrameSource frames() const;
};

struct SequenceResult {
  std::string video_id;
  int object_id = 0;
  std::vector<BoundingBox> predictions;
  std::vector<double> ious;
  double mean_iou = 0.0;
  SuccessCurve curve;
  double fps = 0.0;
  bool has_vot = false;
  VotResult vot;
};

struct EvalReport {
  std::vector<SequenceResult> sequences;  // sorted by (video_id, object_id)
  SuccessCurve curve;                     // mean of per-sequence curves
  double auc = 0.0;                       // mean per-sequence AUC
  double mean_iou = 0.0;                  // mean per-sequence mean IoU
  double accuracy = 0.0;                  // mean per-sequence VOT accuracy
  int failures = 0;                       // total VOT failures
  double fps = 0.0;
};

struct EvalOptions {
  TrackerConfig tracker;
  bool run_vot = true;
  VotConfig vot;
};

/// One-pass evaluation of a live model, optionally with the VOT protocol.
/// Sequences run in parallel; the report does not depend on the thread count.
EvalReport evaluate(const SiameseModel& model, std::span<const EvalSequence> sequences,
                    const EvalOptions& options = {});

/// Scores stored predictions (one list per sequence, same order).
EvalReport evaluate_predictions(std::span<const EvalSequence> sequences,
                                std::span<const std::vector<BoundingBox>> predictions);

/// {per_sequence: [...], aggregate: {auc, mean_iou, accuracy, failures}}.
void write_metrics_json(const EvalReport& report, const std::filesystem::path& path);
/// threshold,success_rate rows of the mean curve.
void write_success_csv(const EvalReport& report, const std::filesystem::path& path);

/// JSON lines {frame_index, x, y, w, h} with (x, y) the top-left corner.
void write_predictions(std::span<const BoundingBox> boxes, const std::filesystem::path& path);
std::vector<BoundingBox> read_predictions(const std::filesystem::path& path);

struct StudyRow {
  double fraction = 0.0;
  int videos = 0;
  double accuracy = 0.0;
  int failures = 0;
  double auc = 0.0;
  double final_loss = 0.0;
};

struct StudyOptions {
  TrainConfig train;
  EvalOptions eval;
  std::uint64_t subset_seed = 0;
};

/// Trains one model per fraction of the curated videos and evaluates each on
/// the held-out sequences.
std::vector<StudyRow> dataset_size_study(const CuratedDataset& dataset,
                                         std::span<const double> fractions,
                                         std::span<const EvalSequence> held_out,
                                         const StudyOptions& options);

void write_study_csv(std::span<const StudyRow> rows, const std::filesystem::path& path);

}  // namespace siamfc
