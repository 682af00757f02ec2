#include "run_config.hpp"

#include <fmt/format.h>

#include <boost/property_tree/ini_parser.hpp>
#include <charconv>
#include <fstream>
#include <sstream>

#include "siamfc/error.hpp"

namespace siamfc::cli {

namespace pt = boost::property_tree;

namespace {

std::string num(double v) { return fmt::format("{}", v); }

pt::ptree defaults() {
  const SynthConfig synth;
  const CropSpec crop;
  const TrainConfig train;
  const TrackerConfig track;
  const VotConfig vot;
  const std::vector<std::pair<std::string, std::string>> entries = {
      {"run.seed", "0"},
      {"run.threads", "1"},
      {"io.data", ""},
      {"io.eval_data", ""},
      {"io.model", ""},
      {"io.predictions", ""},
      {"io.resume", ""},
      {"io.sequence", ""},
      {"io.frames", ""},
      {"io.init", ""},
      {"io.out", ""},
      {"synth.count", "20"},
      {"synth.test_count", "10"},
      {"synth.canvas", std::to_string(synth.canvas)},
      {"synth.object_count", std::to_string(synth.object_count)},
      {"synth.clutter", num(synth.clutter)},
      {"synth.illumination", num(synth.illumination)},
      {"synth.spin", num(synth.spin)},
      {"synth.frames", std::to_string(synth.frames)},
      {"synth.min_size", std::to_string(synth.min_size)},
      {"synth.max_size", std::to_string(synth.max_size)},
      {"curate.exemplar_side", std::to_string(crop.exemplar_side)},
      {"curate.search_side", std::to_string(crop.search_side)},
      {"curate.context", num(crop.context)},
      {"train.preset", train.preset},
      {"train.epochs", std::to_string(train.epochs)},
      {"train.pairs_per_epoch", std::to_string(train.pairs_per_epoch)},
      {"train.batch", std::to_string(train.batch)},
      {"train.lr_start", num(train.lr_start)},
      {"train.lr_end", num(train.lr_end)},
      {"train.max_gap", std::to_string(train.max_gap)},
      {"train.radius", num(train.radius)},
      {"train.grayscale", num(train.grayscale)},
      {"train.momentum", num(train.momentum)},
      {"track.scales", std::to_string(track.num_scales)},
      {"track.scale_step", num(track.scale_step)},
      {"track.scale_damp", num(track.scale_damp)},
      {"track.window_weight", num(track.window_weight)},
      {"track.scale_penalty", num(track.scale_penalty)},
      {"track.upsample_to", std::to_string(track.upsample_to)},
      {"track.overlays", "false"},
      {"eval.vot", "true"},
      {"eval.reinit_delay", std::to_string(vot.reinit_delay)},
      {"study.fractions", "0.1,0.5,1.0"},
  };
  pt::ptree tree;
  for (const auto& [k, v] : entries) tree.put(k, v);
  return tree;
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("{} = '{}' is not a valid number", key, text));
  }
  return value;
}

}  // namespace

RunConfig::RunConfig() : tree_(defaults()) {}

bool RunConfig::has_key(const std::string& key) const {
  return static_cast<bool>(tree_.get_child_optional(key));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key.find('.') == std::string::npos || !has_key(key)) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  tree_.put(key, value);
}

std::string RunConfig::get(const std::string& key) const {
  if (!has_key(key)) throw ConfigError("unknown config key '" + key + "'");
  return tree_.get<std::string>(key);
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  pt::ptree file;
  try {
    pt::read_ini(in, file);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("{}:{}: {}", path.string(), e.line(), e.message()));
  }
  for (const auto& [section, body] : file) {
    if (body.empty()) throw ConfigError(path.string() + ": key '" + section + "' outside a section");
    for (const auto& [key, value] : body) set(section + "." + key, value.data());
  }
}

void RunConfig::write_snapshot(const std::filesystem::path& path,
                               const std::vector<std::string>& sections) const {
  pt::ptree out;
  for (const auto& s : sections) out.put_child(s, tree_.get_child(s));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  pt::write_ini(f, out);
}

int RunConfig::get_int(const std::string& key) const { return parse_value<int>(key, get(key)); }

double RunConfig::get_double(const std::string& key) const {
  return parse_value<double>(key, get(key));
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(fmt::format("{} = '{}' is not a boolean", key, v));
}

std::uint64_t RunConfig::seed() const { return parse_value<std::uint64_t>("run.seed", get("run.seed")); }

int RunConfig::threads() const {
  const int t = get_int("run.threads");
  if (t < 1) throw ConfigError("run.threads must be >= 1");
  return t;
}

std::filesystem::path RunConfig::path(const std::string& key) const {
  const std::string v = get("io." + key);
  if (v.empty()) throw ConfigError("missing required path --" + key);
  return v;
}

SynthConfig RunConfig::synth() const {
  SynthConfig c;
  c.canvas = get_int("synth.canvas");
  c.object_count = get_int("synth.object_count");
  c.clutter = get_double("synth.clutter");
  c.illumination = get_double("synth.illumination");
  c.spin = get_double("synth.spin");
  c.frames = get_int("synth.frames");
  c.min_size = get_int("synth.min_size");
  c.max_size = get_int("synth.max_size");
  c.seed = seed();
  c.validate();
  return c;
}

CropSpec RunConfig::crop() const {
  CropSpec c;
  c.exemplar_side = get_int("curate.exemplar_side");
  c.search_side = get_int("curate.search_side");
  c.context = get_double("curate.context");
  if (c.exemplar_side < 1 || c.search_side < c.exemplar_side || c.context < 0.0) {
    throw ConfigError("curate: need 1 <= exemplar_side <= search_side and context >= 0");
  }
  return c;
}

TrainConfig RunConfig::train() const {
  TrainConfig c;
  c.preset = get("train.preset");
  c.epochs = get_int("train.epochs");
  c.pairs_per_epoch = get_int("train.pairs_per_epoch");
  c.batch = get_int("train.batch");
  c.lr_start = get_double("train.lr_start");
  c.lr_end = get_double("train.lr_end");
  c.max_gap = get_int("train.max_gap");
  c.radius = get_double("train.radius");
  c.grayscale = get_double("train.grayscale");
  c.momentum = get_double("train.momentum");
  c.seed = seed();
  c.validate();
  return c;
}

TrackerConfig RunConfig::tracker() const {
  TrackerConfig c;
  c.num_scales = get_int("track.scales");
  if (c.num_scales != 3 && c.num_scales != 5) throw ConfigError("track.scales must be 3 or 5");
  c.scale_step = get_double("track.scale_step");
  c.scale_damp = get_double("track.scale_damp");
  c.window_weight = get_double("track.window_weight");
  c.scale_penalty = get_double("track.scale_penalty");
  c.upsample_to = get_int("track.upsample_to");
  c.crop = crop();
  c.validate();
  return c;
}

EvalOptions RunConfig::eval() const {
  EvalOptions o;
  o.tracker = tracker();
  o.run_vot = get_bool("eval.vot");
  o.vot.reinit_delay = get_int("eval.reinit_delay");
  return o;
}

std::vector<double> RunConfig::study_fractions() const {
  std::vector<double> out;
  std::stringstream ss(get("study.fractions"));
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_value<double>("study.fractions", item));
  if (out.empty()) throw ConfigError("study.fractions is empty");
  return out;
}

}  // namespace siamfc::cli
