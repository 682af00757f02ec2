#pragma once

#include <boost/property_tree/ptree.hpp>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "siamfc/curation.hpp"
#include "siamfc/evalbench.hpp"
#include "siamfc/synthdata.hpp"
#include "siamfc/tracker.hpp"
#include "siamfc/training.hpp"

namespace siamfc::cli {

/// Layered key/value configuration: built-in defaults, then an INI file, then
/// command-line overrides. Keys are "section.key".
class RunConfig {
 public:
  RunConfig();

  /// Merges an INI file; unknown sections or keys are a ConfigError.
  void load_file(const std::filesystem::path& path);
  /// Sets one "section.key" to a textual value; unknown keys are rejected.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  bool has_key(const std::string& key) const;

  /// Writes every key of the given sections (all values explicit).
  void write_snapshot(const std::filesystem::path& path,
                      const std::vector<std::string>& sections) const;

  std::uint64_t seed() const;
  int threads() const;
  std::filesystem::path path(const std::string& key) const;  // io.<key>, throws if unset

  SynthConfig synth() const;
  CropSpec crop() const;
  TrainConfig train() const;
  TrackerConfig tracker() const;
  EvalOptions eval() const;
  std::vector<double> study_fractions() const;

  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

 private:
  boost::property_tree::ptree tree_;
};

}  // namespace siamfc::cli
