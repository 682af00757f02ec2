#include "siamfc/evalbench.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "siamfc/error.hpp"
#include "siamfc/parallel.hpp"

namespace siamfc {

using json = nlohmann::json;

double iou(const BoundingBox& a, const BoundingBox& b) {
  if (!a.valid() || !b.valid()) return 0.0;
  const double ix = std::max(0.0, std::min(a.left() + a.w, b.left() + b.w) -
                                      std::max(a.left(), b.left()));
  const double iy = std::max(0.0, std::min(a.top() + a.h, b.top() + b.h) -
                                      std::max(a.top(), b.top()));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

std::vector<double> default_thresholds() {
  std::vector<double> t(21);
  for (int i = 0; i <= 20; ++i) t[i] = i / 20.0;
  return t;
}

SuccessCurve success_curve(std::span<const double> ious, std::span<const double> thresholds) {
  if (thresholds.empty()) throw ConfigError("success curve needs at least one threshold");
  SuccessCurve curve;
  curve.thresholds.assign(thresholds.begin(), thresholds.end());
  for (double t : thresholds) {
    const auto above = std::count_if(ious.begin(), ious.end(), [t](double v) { return v > t; });
    curve.success_rates.push_back(ious.empty() ? 0.0
                                               : static_cast<double>(above) / ious.size());
  }
  curve.auc = std::accumulate(curve.success_rates.begin(), curve.success_rates.end(), 0.0) /
              curve.success_rates.size();
  return curve;
}

SuccessCurve ope(std::span<const BoundingBox> predictions,
                 std::span<const BoundingBox> ground_truth,
                 std::span<const double> thresholds) {
  if (predictions.size() != ground_truth.size()) {
    throw ShapeError("ope: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(ground_truth.size()) + " ground-truth frames");
  }
  std::vector<double> ious(predictions.size());
  for (std::size_t i = 0; i < ious.size(); ++i) ious[i] = iou(predictions[i], ground_truth[i]);
  return success_curve(ious, thresholds);
}

SuccessCurve ope(std::span<const BoundingBox> predictions,
                 std::span<const BoundingBox> ground_truth) {
  const auto t = default_thresholds();
  return ope(predictions, ground_truth, t);
}

const char* to_string(FrameStatus status) {
  switch (status) {
    case FrameStatus::Init: return "init";
    case FrameStatus::Tracked: return "tracked";
    case FrameStatus::Failure: return "failure";
    case FrameStatus::Skipped: return "skipped";
  }
  return "?";
}

VotResult vot_run(SequenceTracker& tracker, int frame_count, const FrameSource& frames,
                  std::span<const BoundingBox> ground_truth, const VotConfig& config) {
  if (frame_count < 1) throw ConfigError("vot_run: need at least one frame");
  if (static_cast<int>(ground_truth.size()) != frame_count) {
    throw ShapeError("vot_run: " + std::to_string(ground_truth.size()) +
                     " ground-truth boxes for " + std::to_string(frame_count) + " frames");
  }
  if (config.reinit_delay < 1) throw ConfigError("vot_run: reinit_delay must be >= 1");
  VotResult result;
  result.overlaps.assign(frame_count, 0.0);
  result.status.assign(frame_count, FrameStatus::Skipped);

  int reinit_at = 0;
  bool tracking = false;
  double sum = 0.0;
  for (int f = 0; f < frame_count; ++f) {
    if (!tracking) {
      if (f < reinit_at) continue;
      tracker.initialize(frames(f), ground_truth[f]);
      result.status[f] = FrameStatus::Init;
      tracking = true;
      continue;
    }
    const double overlap = iou(tracker.update(frames(f)), ground_truth[f]);
    result.overlaps[f] = overlap;
    ++result.counted_frames;
    sum += overlap;
    if (overlap > 0.0) {
      result.status[f] = FrameStatus::Tracked;
    } else {
      result.status[f] = FrameStatus::Failure;
      ++result.failures;
      tracking = false;
      reinit_at = f + config.reinit_delay;
    }
  }
  result.accuracy = result.counted_frames ? sum / result.counted_frames : 0.0;
  return result;
}

EvalSequence EvalSequence::from_annotation(const SequenceAnnotation& seq, int object_id) {
  EvalSequence out;
  out.video_id = seq.video_id;
  out.object_id = object_id;
  out.ground_truth = seq.track_of(object_id);
  for (const auto& frame : seq.frames) out.frame_files.push_back(seq.image_file(frame));
  return out;
}

EvalSequence EvalSequence::from_annotation(const SequenceAnnotation& seq) {
  const auto ids = seq.object_ids();
  if (ids.empty()) throw ConfigError("sequence " + seq.video_id + " has no objects");
  return from_annotation(seq, ids.front());
}

FrameSource EvalSequence::frames() const {
  return [files = frame_files](int i) { return read_png(files.at(static_cast<std::size_t>(i))); };
}

namespace {

void sort_results(std::vector<SequenceResult>& results) {
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) {
    return std::tie(a.video_id, a.object_id) < std::tie(b.video_id, b.object_id);
  });
}

void aggregate(EvalReport& report) {
  const auto n = static_cast<double>(report.sequences.size());
  report.curve.thresholds = default_thresholds();
  report.curve.success_rates.assign(report.curve.thresholds.size(), 0.0);
  if (report.sequences.empty()) return;
  double frames = 0.0, seconds = 0.0;
  for (const auto& r : report.sequences) {
    for (std::size_t i = 0; i < r.curve.success_rates.size(); ++i) {
      report.curve.success_rates[i] += r.curve.success_rates[i] / n;
    }
    report.auc += r.curve.auc / n;
    report.mean_iou += r.mean_iou / n;
    report.accuracy += r.vot.accuracy / n;
    report.failures += r.vot.failures;
    if (r.fps > 0.0) {
      frames += r.predictions.size();
      seconds += r.predictions.size() / r.fps;
    }
  }
  report.curve.auc = report.auc;
  report.fps = seconds > 0.0 ? frames / seconds : 0.0;
}

SequenceResult score_sequence(const EvalSequence& seq, std::vector<BoundingBox> predictions) {
  SequenceResult r;
  r.video_id = seq.video_id;
  r.object_id = seq.object_id;
  r.predictions = std::move(predictions);
  if (r.predictions.size() != seq.ground_truth.size()) {
    throw ShapeError("sequence " + seq.video_id + ": " + std::to_string(r.predictions.size()) +
                     " predictions for " + std::to_string(seq.ground_truth.size()) + " frames");
  }
  for (std::size_t i = 0; i < r.predictions.size(); ++i) {
    r.ious.push_back(iou(r.predictions[i], seq.ground_truth[i]));
  }
  r.mean_iou = r.ious.empty() ? 0.0
                              : std::accumulate(r.ious.begin(), r.ious.end(), 0.0) / r.ious.size();
  r.curve = success_curve(r.ious, default_thresholds());
  return r;
}

}  // namespace

EvalReport evaluate(const SiameseModel& model, std::span<const EvalSequence> sequences,
                    const EvalOptions& options) {
  options.tracker.validate();
  EvalReport report;
  report.sequences.resize(sequences.size());
  parallel_for(0, static_cast<int>(sequences.size()), [&](int i) {
    const EvalSequence& seq = sequences[i];
    const int count = static_cast<int>(seq.frame_files.size());
    const FrameSource frames = seq.frames();
    const auto start = std::chrono::steady_clock::now();
    auto boxes = track(model, count, frames, seq.ground_truth.at(0), options.tracker);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    SequenceResult r = score_sequence(seq, std::move(boxes));
    r.fps = secs > 0.0 ? count / secs : 0.0;
    if (options.run_vot) {
      SiamFCTracker tracker(model, options.tracker);
      r.vot = vot_run(tracker, count, frames, seq.ground_truth, options.vot);
      r.has_vot = true;
    }
    spdlog::debug("eval: {} auc {:.3f} mean iou {:.3f}", seq.video_id, r.curve.auc, r.mean_iou);
    report.sequences[i] = std::move(r);
  });
  sort_results(report.sequences);
  aggregate(report);
  return report;
}

EvalReport evaluate_predictions(std::span<const EvalSequence> sequences,
                                std::span<const std::vector<BoundingBox>> predictions) {
  if (sequences.size() != predictions.size()) {
    throw ShapeError("evaluate_predictions: " + std::to_string(predictions.size()) +
                     " prediction lists for " + std::to_string(sequences.size()) + " sequences");
  }
  EvalReport report;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    report.sequences.push_back(score_sequence(sequences[i], predictions[i]));
  }
  sort_results(report.sequences);
  aggregate(report);
  return report;
}

namespace {

json curve_json(const SuccessCurve& c) {
  return json{{"thresholds", c.thresholds}, {"success_rates", c.success_rates}, {"auc", c.auc}};
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_metrics_json(const EvalReport& report, const std::filesystem::path& path) {
  json per = json::array();
  for (const auto& r : report.sequences) {
    json item{{"video_id", r.video_id},
              {"object_id", r.object_id},
              {"frames", r.predictions.size()},
              {"auc", r.curve.auc},
              {"mean_iou", r.mean_iou},
              {"ious", r.ious}};
    if (r.has_vot) {
      std::vector<std::string> status;
      for (auto s : r.vot.status) status.emplace_back(to_string(s));
      item["vot"] = json{{"accuracy", r.vot.accuracy},
                         {"failures", r.vot.failures},
                         {"counted_frames", r.vot.counted_frames},
                         {"overlaps", r.vot.overlaps},
                         {"status", status}};
    }
    per.push_back(std::move(item));
  }
  // Timing stays out of the file so reruns are byte-identical.
  const json doc{{"per_sequence", per},
                 {"aggregate",
                  {{"auc", report.auc},
                   {"mean_iou", report.mean_iou},
                   {"accuracy", report.accuracy},
                   {"failures", report.failures},
                   {"sequences", report.sequences.size()}}},
                 {"success_curve", curve_json(report.curve)}};
  open_out(path) << doc.dump(1) << "\n";
}

void write_success_csv(const EvalReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "threshold,success_rate\n";
  for (std::size_t i = 0; i < report.curve.thresholds.size(); ++i) {
    out << fmt::format("{:.2f},{:.6f}\n", report.curve.thresholds[i],
                       report.curve.success_rates[i]);
  }
}

void write_predictions(std::span<const BoundingBox> boxes, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    out << json{{"frame_index", i}, {"x", b.left()}, {"y", b.top()}, {"w", b.w}, {"h", b.h}}
               .dump()
        << "\n";
  }
}

std::vector<BoundingBox> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read predictions " + path.string());
  std::vector<BoundingBox> boxes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      boxes.push_back(BoundingBox::from_corner(j.at("x").get<double>(), j.at("y").get<double>(),
                                               j.at("w").get<double>(), j.at("h").get<double>()));
    } catch (const json::exception& e) {
      throw FormatError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return boxes;
}

std::vector<StudyRow> dataset_size_study(const CuratedDataset& dataset,
                                         std::span<const double> fractions,
                                         std::span<const EvalSequence> held_out,
                                         const StudyOptions& options) {
  std::vector<StudyRow> rows;
  for (double fraction : fractions) {
    if (!(fraction > 0.0) || fraction > 1.0) {
      throw ConfigError(fmt::format("study fraction {} outside (0, 1]", fraction));
    }
    const CuratedDataset subset = subset_videos(dataset, fraction, options.subset_seed);
    spdlog::info("study: fraction {:.2f} uses {} of {} videos", fraction, subset.videos.size(),
                 dataset.videos.size());
    const TrainResult trained = train(subset, options.train);
    const EvalReport report = evaluate(trained.model, held_out, options.eval);
    rows.push_back({fraction, static_cast<int>(subset.videos.size()), report.accuracy,
                    report.failures, report.auc,
                    trained.log.empty() ? 0.0 : trained.log.back().mean_loss});
  }
  return rows;
}

void write_study_csv(std::span<const StudyRow> rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "fraction,videos,accuracy,failures,auc,final_loss\n";
  for (const auto& r : rows) {
    out << fmt::format("{:.4f},{},{:.6f},{},{:.6f},{:.6f}\n", r.fraction, r.videos, r.accuracy,
                       r.failures, r.auc, r.final_loss);
  }
}

}  // namespace siamfc
