#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "run_config.hpp"
#include "siamfc/error.hpp"
#include "siamfc/evalbench.hpp"
#include "siamfc/model_io.hpp"
#include "siamfc/parallel.hpp"
#include "siamfc/synthdata.hpp"
#include "siamfc/training.hpp"

namespace fs = std::filesystem;
using namespace siamfc;
using siamfc::cli::RunConfig;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kConfig = 3, kIo = 4, kFormat = 5, kRuntime = 6 };

struct FlagBinding {
  const char* flag;
  const char* key;
  const char* help;
};

constexpr FlagBinding kFlags[] = {
    {"--seed", "run.seed", "random seed"},
    {"--threads", "run.threads", "worker threads (1 = deterministic mode)"},
    {"--preset", "train.preset", "network preset: paper or tiny"},
    {"--scales", "track.scales", "scale pyramid size: 3 or 5"},
    {"--out", "io.out", "output directory"},
    {"--grayscale-frac", "train.grayscale", "fraction of training pairs converted to grayscale"},
    {"--epochs", "train.epochs", "training epochs"},
    {"--pairs-per-epoch", "train.pairs_per_epoch", "sampled pairs per epoch"},
    {"--data", "io.data", "input dataset directory"},
    {"--eval-data", "io.eval_data", "held-out sequences (study)"},
    {"--model", "io.model", "model file"},
    {"--predictions", "io.predictions", "directory of stored predictions (eval)"},
    {"--resume", "io.resume", "checkpoint to resume training from"},
    {"--sequence", "io.sequence", "annotated sequence directory (track)"},
    {"--frames", "io.frames", "directory of frame PNGs (track)"},
    {"--init", "io.init", "initial box x,y,w,h (track with --frames)"},
    {"--count", "synth.count", "training sequences to generate"},
    {"--test-count", "synth.test_count", "held-out sequences to generate"},
    {"--fractions", "study.fractions", "comma-separated dataset fractions (study)"},
};

int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfig;
  if (dynamic_cast<const IoError*>(&e)) return kIo;
  if (dynamic_cast<const FormatError*>(&e)) return kFormat;
  return kRuntime;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("siamfc");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("SIAMFC_LOG");
  const std::string level = env ? env : "info";
  const auto parsed = spdlog::level::from_str(level);
  if (parsed == spdlog::level::off && level != "off") {
    throw ConfigError("SIAMFC_LOG='" + level + "' is not a log level");
  }
  spdlog::set_level(parsed);
}

void write_snapshot(const RunConfig& cfg, const std::string& command,
                    const std::vector<std::string>& sections) {
  std::vector<std::string> all{"run", "io"};
  all.insert(all.end(), sections.begin(), sections.end());
  cfg.write_snapshot(cfg.path("out") / (command + ".config.ini"), all);
}

std::vector<SequenceAnnotation> load_sequences(const fs::path& where) {
  if (fs::is_regular_file(where)) return {read_annotation(where)};
  if (fs::exists(where / kManifestFile)) return load_manifest(where);
  if (fs::exists(where / kAnnotationFile)) return {read_annotation(where / kAnnotationFile)};
  std::vector<fs::path> dirs;
  if (fs::is_directory(where)) {
    for (const auto& entry : fs::directory_iterator(where)) {
      if (entry.is_directory() && fs::exists(entry.path() / kAnnotationFile)) {
        dirs.push_back(entry.path());
      }
    }
  }
  if (dirs.empty()) throw IoError("no annotated sequences found in " + where.string());
  std::sort(dirs.begin(), dirs.end());
  std::vector<SequenceAnnotation> out;
  for (const auto& d : dirs) out.push_back(read_annotation(d / kAnnotationFile));
  return out;
}

std::vector<EvalSequence> eval_sequences(const fs::path& where) {
  std::vector<EvalSequence> out;
  for (const auto& seq : load_sequences(where)) out.push_back(EvalSequence::from_annotation(seq));
  return out;
}

void draw_box(Image& img, const BoundingBox& box) {
  const int x0 = static_cast<int>(std::lround(box.left()));
  const int y0 = static_cast<int>(std::lround(box.top()));
  const int x1 = static_cast<int>(std::lround(box.left() + box.w)) - 1;
  const int y1 = static_cast<int>(std::lround(box.top() + box.h)) - 1;
  auto put = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    img.at(x, y, 0) = 255.0f;
    img.at(x, y, 1) = 0.0f;
    img.at(x, y, 2) = 0.0f;
  };
  for (int t = 0; t < 2; ++t) {
    for (int x = x0; x <= x1; ++x) {
      put(x, y0 + t);
      put(x, y1 - t);
    }
    for (int y = y0; y <= y1; ++y) {
      put(x0 + t, y);
      put(x1 - t, y);
    }
  }
}

BoundingBox parse_box(const std::string& text) {
  double v[4];
  if (std::sscanf(text.c_str(), "%lf,%lf,%lf,%lf", &v[0], &v[1], &v[2], &v[3]) != 4) {
    throw ConfigError("--init expects x,y,w,h, got '" + text + "'");
  }
  const auto box = BoundingBox::from_corner(v[0], v[1], v[2], v[3]);
  if (!box.valid()) throw ConfigError("--init box must have positive size");
  return box;
}

int cmd_synth(const RunConfig& cfg) {
  const fs::path out = cfg.path("out");
  const SynthConfig base = cfg.synth();
  const int count = cfg.get_int("synth.count");
  const int test_count = cfg.get_int("synth.test_count");
  if (count < 1 || test_count < 0) throw ConfigError("synth: need count >= 1 and test_count >= 0");
  gen_dataset(count, base, cfg.seed(), Split::Train, out / "train");
  if (test_count > 0) gen_dataset(test_count, base, cfg.seed(), Split::Test, out / "test");
  write_snapshot(cfg, "synth", {"synth"});
  fmt::print("synth: {} train and {} test sequences in {}\n", count, test_count, out.string());
  return kOk;
}

int cmd_curate(const RunConfig& cfg) {
  const auto sequences = load_sequences(cfg.path("data"));
  const fs::path out = cfg.path("out");
  const CuratedDataset ds = curate(sequences, out, cfg.crop());
  write_snapshot(cfg, "curate", {"curate"});
  fmt::print("curate: {} frames from {} videos in {}\n", ds.frame_count(), ds.videos.size(),
             out.string());
  return kOk;
}

int cmd_train(const RunConfig& cfg) {
  const CuratedDataset ds = load_curated(cfg.path("data"));
  const TrainConfig config = cfg.train();
  TrainOptions options;
  options.out_dir = cfg.path("out");
  if (!cfg.get("io.resume").empty()) options.resume_from = cfg.path("resume");
  write_snapshot(cfg, "train", {"train"});
  const TrainResult result = train(ds, config, options);
  const double last = result.log.empty() ? 0.0 : result.log.back().mean_loss;
  fmt::print("train: {} epochs, final mean loss {:.6f}, model {}\n", result.log.size(), last,
             (*options.out_dir / "model.sfcm").string());
  return kOk;
}

int cmd_track(const RunConfig& cfg) {
  const SiameseModel model = load_model(cfg.path("model"));
  const TrackerConfig tracker = cfg.tracker();
  const fs::path out = cfg.path("out");
  std::vector<fs::path> files;
  BoundingBox init;
  if (!cfg.get("io.sequence").empty()) {
    const EvalSequence seq = EvalSequence::from_annotation(load_sequences(cfg.path("sequence")).at(0));
    files = seq.frame_files;
    init = seq.ground_truth.at(0);
  } else {
    for (const auto& entry : fs::directory_iterator(cfg.path("frames"))) {
      if (entry.path().extension() == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no PNG frames in " + cfg.path("frames").string());
    init = parse_box(cfg.get("io.init"));
  }
  write_snapshot(cfg, "track", {"curate", "track"});
  const auto start = std::chrono::steady_clock::now();
  const auto boxes = track(model, static_cast<int>(files.size()),
                           [&](int i) { return read_png(files[i]); }, init, tracker);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_predictions(boxes, out / "predictions.jsonl");
  if (cfg.get_bool("track.overlays")) {
    fs::create_directories(out / "overlays");
    for (std::size_t i = 0; i < files.size(); ++i) {
      Image img = read_png(files[i]);
      draw_box(img, boxes[i]);
      write_png(img, out / "overlays" / files[i].filename());
    }
  }
  fmt::print("track: {} frames, {} scales, {:.1f} fps\n", boxes.size(), tracker.num_scales,
             secs > 0.0 ? boxes.size() / secs : 0.0);
  return kOk;
}

int cmd_eval(const RunConfig& cfg) {
  const auto sequences = eval_sequences(cfg.path("data"));
  const fs::path out = cfg.path("out");
  EvalReport report;
  if (!cfg.get("io.predictions").empty()) {
    std::vector<std::vector<BoundingBox>> preds;
    for (const auto& s : sequences) {
      preds.push_back(read_predictions(cfg.path("predictions") / (s.video_id + ".jsonl")));
    }
    write_snapshot(cfg, "eval", {"eval"});
    report = evaluate_predictions(sequences, preds);
  } else {
    const SiameseModel model = load_model(cfg.path("model"));
    const EvalOptions options = cfg.eval();
    write_snapshot(cfg, "eval", {"curate", "track", "eval"});
    report = evaluate(model, sequences, options);
    for (const auto& r : report.sequences) {
      write_predictions(r.predictions, out / "predictions" / (r.video_id + ".jsonl"));
    }
  }
  write_metrics_json(report, out / "metrics.json");
  write_success_csv(report, out / "success.csv");
  fmt::print("eval: {} sequences, auc {:.4f}, mean iou {:.4f}, accuracy {:.4f}, failures {}",
             report.sequences.size(), report.auc, report.mean_iou, report.accuracy,
             report.failures);
  if (report.fps > 0.0) fmt::print(", {:.1f} fps", report.fps);
  fmt::print("\n");
  return kOk;
}

int cmd_study(const RunConfig& cfg) {
  const CuratedDataset ds = load_curated(cfg.path("data"));
  const auto held_out = eval_sequences(cfg.path("eval_data"));
  const fs::path out = cfg.path("out");
  StudyOptions options;
  options.train = cfg.train();
  options.eval = cfg.eval();
  options.subset_seed = cfg.seed();
  const auto fractions = cfg.study_fractions();
  write_snapshot(cfg, "study", {"train", "curate", "track", "eval", "study"});
  const auto rows = dataset_size_study(ds, fractions, held_out, options);
  write_study_csv(rows, out / "study.csv");
  for (const auto& r : rows) {
    fmt::print("study: fraction {:.2f} ({} videos): accuracy {:.4f}, failures {}, auc {:.4f}\n",
               r.fraction, r.videos, r.accuracy, r.failures, r.auc);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fully-convolutional Siamese tracking toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_file;
  std::vector<std::string> sets;
  std::vector<std::optional<std::string>> values(std::size(kFlags));
  app.add_option("--config", config_file, "INI config file (flags override it)");
  app.add_option("--set", sets, "override any config key: section.key=value");
  for (std::size_t i = 0; i < std::size(kFlags); ++i) {
    app.add_option(kFlags[i].flag, values[i], kFlags[i].help);
  }
  const std::pair<const char*, const char*> commands[] = {
      {"synth", "generate a synthetic train/test dataset"},
      {"curate", "extract exemplar/search crops from annotated sequences"},
      {"train", "train the embedding on curated crops"},
      {"track", "track a target through a sequence"},
      {"eval", "score a model or stored predictions against ground truth"},
      {"study", "train on growing dataset fractions and evaluate each"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kUsage;
  }

  try {
    setup_logging();
    RunConfig cfg;
    if (config_file) cfg.load_file(*config_file);
    for (std::size_t i = 0; i < std::size(kFlags); ++i) {
      if (values[i]) cfg.set(kFlags[i].key, *values[i]);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    set_num_threads(cfg.threads());

    const std::string command = app.get_subcommands().front()->get_name();
    if (command == "synth") return cmd_synth(cfg);
    if (command == "curate") return cmd_curate(cfg);
    if (command == "train") return cmd_train(cfg);
    if (command == "track") return cmd_track(cfg);
    if (command == "eval") return cmd_eval(cfg);
    return cmd_study(cfg);
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: format: " << e.what() << "\n";
    return kFormat;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return kRuntime;
  }
}
