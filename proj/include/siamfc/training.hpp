#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "siamfc/curation.hpp"
#include "siamfc/net.hpp"

namespace siamfc {

/// Ground truth for one score map: +1 within `radius` pixels of the centre
/// (cell distance times stride), -1 elsewhere, with class-balanced weights.
struct LabelMap {
  int height = 0;
  int width = 0;
  int stride = 1;
  double radius = 0.0;
  int center_y = 0;
  int center_x = 0;
  std::vector<float> labels;
  std::vector<float> weights;

  int positives() const;
  float label(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  float weight(int y, int x) const { return weights[static_cast<std::size_t>(y) * width + x]; }
};

/// Positive weights 1/(2 #pos), negative 1/(2 #neg); when one class is
/// empty the other gets uniform weights summing to 1. The centre is
/// (floor(h/2), floor(w/2)).
LabelMap make_label_map(int height, int width, int stride, double radius);

/// log(1 + exp(-y v)), stable for large |v|.
double logistic_loss(double v, double y);

/// d/dv of logistic_loss: -y * sigmoid(-y v).
double logistic_loss_grad(double v, double y);

/// Weighted sum of per-cell logistic losses. With uniform weights this is the
/// plain mean over the map.
double map_loss(std::span<const float> scores, const LabelMap& labels);
std::vector<float> map_loss_grad(std::span<const float> scores, const LabelMap& labels);

struct TrainConfig {
  std::string preset = "paper";
  int epochs = 50;
  int pairs_per_epoch = 50000;
  int batch = 8;
  double lr_start = 1e-2;
  double lr_end = 1e-5;
  int max_gap = 100;        // T
  double radius = 16.0;     // R, in search-crop pixels
  double grayscale = 0.0;   // probability a pair is converted to grayscale
  double momentum = 0.0;    // plain SGD when 0
  std::uint64_t seed = 0;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

/// Geometric annealing from lr_start (epoch 0) to lr_end (last epoch).
double lr_at(int epoch, const TrainConfig& config);

/// One exemplar/search pair with its label map. Tensors are (1, C, H, W).
struct TrainSample {
  Tensor exemplar;
  Tensor search;
  LabelMap labels;
};

/// Momentum buffers; unused when momentum is 0.
struct SgdState {
  double momentum = 0.0;
  NetGrads velocity;
  double bias_velocity = 0.0;
};

/// Gradients of the mean batch loss, exposed for inspection and tests.
struct BatchGradients {
  double loss = 0.0;
  NetGrads net;
  double bias = 0.0;
};

/// Forward and backward through both branches. Batch-norm running statistics
/// are updated (exemplar branch, then search branch).
BatchGradients compute_gradients(SiameseModel& model, std::span<const TrainSample> batch);

/// One plain (or momentum) SGD step on the mean batch loss. Returns the loss
/// before the update. Throws NumericError on a non-finite loss.
double sgd_step(SiameseModel& model, std::span<const TrainSample> batch, double lr,
                SgdState* state = nullptr);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TrainOptions {
  /// Checkpoints, model.sfcm and train_log.jsonl are written here when set.
  std::optional<std::filesystem::path> out_dir;
  /// Checkpoint (.sfcm with its .json sidecar) to resume from.
  std::optional<std::filesystem::path> resume_from;
  /// Stop after this many epochs in this call (for interrupted-run tests).
  std::optional<int> stop_after_epochs;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  SiameseModel model;
  std::vector<EpochLog> log;
  std::vector<std::filesystem::path> checkpoints;
};

/// Runs epochs x pairs_per_epoch sampled pairs in mini-batches. Deterministic
/// for a fixed seed.
TrainResult train(const CuratedDataset& dataset, const TrainConfig& config,
                  const TrainOptions& options = {});

/// Checkpoint file name for a (1-based) completed epoch count.
std::string checkpoint_name(int epoch);

}  // namespace siamfc
