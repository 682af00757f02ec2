#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "siamfc/curation.hpp"
#include "siamfc/image.hpp"

namespace siamfc {

enum class Texture { Checker, Noise, GradientDisc };
enum class Motion { Constant, Sinusoidal };

const char* to_string(Texture t);
const char* to_string(Motion m);
Texture texture_from_string(std::string_view s);
Motion motion_from_string(std::string_view s);

struct SynthConfig {
  int canvas = 256;
  int object_count = 1;
  Texture texture = Texture::Checker;
  Motion motion = Motion::Constant;
  double velocity_x = 3.0;  // px/frame (constant motion)
  double velocity_y = 2.0;
  double amplitude = 40.0;  // px (sinusoidal motion, along the velocity direction)
  double period = 40.0;     // frames
  double scale_drift = 0.0; // per-frame relative size change
  double clutter = 1.0;     // 0: plain background, 1: heavy distractors
  double illumination = 0.0;  // strength of slow per-channel gain/offset drift
  double spin = 0.03;         // max texture rotation speed of targets, rad/frame
  int frames = 30;
  int min_size = 40;
  int max_size = 80;
  std::uint64_t seed = 0;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

struct SynthSequence {
  std::vector<Image> frames;  // 8-bit valued, as written to disk
  /// Per frame, row-major canvas-sized; 1 where object 0 is visible.
  std::vector<std::vector<std::uint8_t>> masks;
  SequenceAnnotation annotation;
};

/// Renders textured targets over a cluttered background. Frame i is
/// "frame_%06d.png"; the annotation has exact target boxes and no base_dir.
/// Objects keep at least one pixel inside the canvas by reflecting at the
/// borders. Pure function of the config.
SynthSequence gen_sequence(const SynthConfig& config, const std::string& video_id = "synth");

enum class Split { Train, Test };

/// Seed of sequence `index`: (seed << 20) + 2 * index, plus 1 for the test
/// split, so train and test sequences never share a seed.
std::uint64_t sequence_seed(std::uint64_t seed, int index, Split split);

/// Sequence config drawn from `base`: texture, motion, velocity, drift and
/// phase vary; canvas, frames, clutter, counts and size range are kept.
SynthConfig varied_config(const SynthConfig& base, std::uint64_t seed);

/// Writes `count` sequences under out_dir/<video_id>/ (frames plus
/// annotation.json) and out_dir/manifest.json. Returns the annotations with
/// base_dir set.
std::vector<SequenceAnnotation> gen_dataset(int count, const SynthConfig& base,
                                            std::uint64_t seed, Split split,
                                            const std::filesystem::path& out_dir);

/// Annotations listed in a manifest written by gen_dataset.
std::vector<SequenceAnnotation> load_manifest(const std::filesystem::path& out_dir);

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kAnnotationFile = "annotation.json";

}  // namespace siamfc
