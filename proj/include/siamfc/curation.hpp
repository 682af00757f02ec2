#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "siamfc/image.hpp"

namespace siamfc {

/// Axis-aligned target box in centre form, image pixel units. The image
/// plane spans [0, width] x [0, height]; pixel (x, y) covers [x, x+1) x [y, y+1).
struct BoundingBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  static BoundingBox from_corner(double x, double y, double w, double h) {
    return {x + 0.5 * w, y + 0.5 * h, w, h};
  }
  double left() const { return cx - 0.5 * w; }
  double top() const { return cy - 0.5 * h; }
  bool valid() const { return w > 0.0 && h > 0.0; }
};

struct ObjectAnnotation {
  int object_id = 0;
  BoundingBox box;
  bool present = true;
};

struct FrameAnnotation {
  int index = 0;
  std::string image_path;  // relative to the annotation file's directory
  std::vector<ObjectAnnotation> objects;
};

/// One annotated video. JSON form:
/// {video_id, frames: [{index, image_path, objects: [{object_id, x, y, w, h, present}]}]}
/// with (x, y) the top-left corner.
struct SequenceAnnotation {
  std::string video_id;
  std::vector<FrameAnnotation> frames;
  std::optional<double> fps;
  std::filesystem::path base_dir;  // where image paths resolve; not serialized

  std::filesystem::path image_file(const FrameAnnotation& frame) const {
    return base_dir / frame.image_path;
  }
  /// Ground-truth boxes of `object_id` on every frame; throws ConfigError if
  /// the object is missing or absent on any frame.
  std::vector<BoundingBox> track_of(int object_id) const;
  std::vector<int> object_ids() const;
};

/// Throws ConfigError unless frame indices strictly increase and every present
/// box has positive size.
void validate(const SequenceAnnotation& seq);

SequenceAnnotation read_annotation(const std::filesystem::path& path);
void write_annotation(const SequenceAnnotation& seq, const std::filesystem::path& path);

struct CropSpec {
  int exemplar_side = 127;
  int search_side = 255;
  /// Context margin p as a fraction of (w + h); 0.25 gives p = (w + h) / 4.
  double context = 0.25;
};

/// Scale s with s(w + 2p) * s(h + 2p) = exemplar_side^2 and p = context * (w + h).
double crop_scale(const BoundingBox& box, const CropSpec& spec = {});

/// Side in source pixels of the exemplar window, exemplar_side / s.
double exemplar_window(const BoundingBox& box, const CropSpec& spec = {});

/// Side in source pixels of the search window, search_side / s.
double search_window(const BoundingBox& box, const CropSpec& spec = {});

struct CropStats {
  long fill_samples = 0;
  long total_samples = 0;
  double fill_fraction() const {
    return total_samples ? static_cast<double>(fill_samples) / total_samples : 0.0;
  }
};

/// Square window of `side` source pixels centred on (cx, cy), bilinearly
/// resampled to out_side x out_side. Samples outside the image read `fill`.
Image extract_crop(const Image& image, double cx, double cy, double side, int out_side,
                   const std::array<float, 3>& fill, CropStats* stats = nullptr);

/// Same with the image's own mean RGB as fill.
Image extract_crop(const Image& image, double cx, double cy, double side, int out_side,
                   CropStats* stats = nullptr);

struct CuratedFrame {
  int frame_index = 0;
  std::string exemplar_file;  // relative to the dataset root
  std::string search_file;
  BoundingBox box;
  double scale = 1.0;
};

struct CuratedObject {
  int object_id = 0;
  std::vector<CuratedFrame> frames;  // ascending frame_index
};

struct CuratedVideo {
  std::string video_id;
  std::vector<CuratedObject> objects;
};

/// Crops on disk plus the index that maps (video, object, frame) to them.
struct CuratedDataset {
  std::filesystem::path root;
  std::vector<CuratedVideo> videos;

  std::size_t frame_count() const;
};

inline constexpr const char* kCurationIndexFile = "index.jsonl";

/// Writes, for every present annotated box, a 127x127 exemplar crop and a
/// 255x255 search crop centred on the target (PNG), and an index.jsonl with
/// one record per curated frame. Frames whose box is absent are skipped and
/// logged. Output bytes depend only on the inputs.
CuratedDataset curate(std::span<const SequenceAnnotation> sequences,
                      const std::filesystem::path& out_dir, const CropSpec& spec = {});

CuratedDataset load_curated(const std::filesystem::path& root);

/// Deterministic subset of ceil(fraction * videos) videos (at least one).
CuratedDataset subset_videos(const CuratedDataset& dataset, double fraction,
                             std::uint64_t seed);

/// Positions of a sampled pair inside a CuratedDataset.
struct PairIndex {
  int video = 0;
  int object = 0;
  int exemplar_frame = 0;  // index into CuratedObject::frames
  int search_frame = 0;
};

/// Samples pairs of distinct frames of one object at most `max_gap` frames
/// apart: video uniformly, then object uniformly, then the frame gap uniformly
/// over the gaps that occur, then a pair with that gap uniformly, then which
/// of the two frames is the exemplar.
class PairSampler {
 public:
  PairSampler(const CuratedDataset& dataset, int max_gap);

  PairIndex sample(std::mt19937_64& rng) const;
  int max_gap() const { return max_gap_; }

 private:
  struct ObjectPairs {
    int object = 0;
    // pairs_by_gap[k] holds (earlier, later) frame positions with the k-th gap.
    std::vector<std::vector<std::pair<int, int>>> pairs_by_gap;
  };
  struct VideoPairs {
    int video = 0;
    std::vector<ObjectPairs> objects;
  };
  std::vector<VideoPairs> videos_;
  int max_gap_ = 1;
};

struct TrainingPair {
  Image exemplar;
  Image search;
  PairIndex index;
  bool grayscale = false;
};

/// Loads the crops of a sampled pair, converting both to grayscale if asked.
TrainingPair load_pair(const CuratedDataset& dataset, const PairIndex& index, bool grayscale);

/// One-shot convenience: samples and loads a pair; grayscale with probability
/// `grayscale_prob`.
TrainingPair sample_pair(const CuratedDataset& dataset, int max_gap, double grayscale_prob,
                         std::mt19937_64& rng);

}  // namespace siamfc
