#include "siamfc/curation.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>

#include "siamfc/error.hpp"
#include "siamfc/parallel.hpp"

namespace siamfc {

using json = nlohmann::json;

std::vector<BoundingBox> SequenceAnnotation::track_of(int object_id) const {
  std::vector<BoundingBox> boxes;
  boxes.reserve(frames.size());
  for (const auto& frame : frames) {
    auto it = std::find_if(frame.objects.begin(), frame.objects.end(),
                           [&](const ObjectAnnotation& o) { return o.object_id == object_id; });
    if (it == frame.objects.end() || !it->present) {
      throw ConfigError(video_id + ": object " + std::to_string(object_id) +
                        " has no box on frame " + std::to_string(frame.index));
    }
    boxes.push_back(it->box);
  }
  return boxes;
}

std::vector<int> SequenceAnnotation::object_ids() const {
  std::vector<int> ids;
  for (const auto& frame : frames) {
    for (const auto& obj : frame.objects) ids.push_back(obj.object_id);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

void validate(const SequenceAnnotation& seq) {
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const auto& frame = seq.frames[i];
    if (i > 0 && frame.index <= seq.frames[i - 1].index) {
      throw ConfigError(seq.video_id + ": frame indices must strictly increase (" +
                        std::to_string(seq.frames[i - 1].index) + " then " +
                        std::to_string(frame.index) + ")");
    }
    for (const auto& obj : frame.objects) {
      if (obj.present && !obj.box.valid()) {
        throw ConfigError(seq.video_id + ": non-positive box for object " +
                          std::to_string(obj.object_id) + " on frame " +
                          std::to_string(frame.index));
      }
    }
  }
}

SequenceAnnotation read_annotation(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("annotation " + path.string() + ": " + e.what());
  }
  SequenceAnnotation seq;
  try {
    seq.video_id = doc.at("video_id").get<std::string>();
    if (doc.contains("fps") && !doc["fps"].is_null()) seq.fps = doc["fps"].get<double>();
    for (const auto& f : doc.at("frames")) {
      FrameAnnotation frame;
      frame.index = f.at("index").get<int>();
      frame.image_path = f.at("image_path").get<std::string>();
      for (const auto& o : f.at("objects")) {
        ObjectAnnotation obj;
        obj.object_id = o.at("object_id").get<int>();
        obj.present = o.value("present", true);
        if (obj.present) {
          obj.box = BoundingBox::from_corner(o.at("x").get<double>(), o.at("y").get<double>(),
                                             o.at("w").get<double>(), o.at("h").get<double>());
        }
        frame.objects.push_back(obj);
      }
      seq.frames.push_back(std::move(frame));
    }
  } catch (const json::exception& e) {
    throw FormatError("annotation " + path.string() + ": " + e.what());
  }
  seq.base_dir = path.parent_path();
  validate(seq);
  return seq;
}

void write_annotation(const SequenceAnnotation& seq, const std::filesystem::path& path) {
  json doc;
  doc["video_id"] = seq.video_id;
  if (seq.fps) doc["fps"] = *seq.fps;
  json frames = json::array();
  for (const auto& frame : seq.frames) {
    json objects = json::array();
    for (const auto& obj : frame.objects) {
      json o{{"object_id", obj.object_id}, {"present", obj.present}};
      if (obj.present) {
        o["x"] = obj.box.left();
        o["y"] = obj.box.top();
        o["w"] = obj.box.w;
        o["h"] = obj.box.h;
      }
      objects.push_back(std::move(o));
    }
    frames.push_back({{"index", frame.index}, {"image_path", frame.image_path}, {"objects", objects}});
  }
  doc["frames"] = std::move(frames);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write annotation " + path.string());
  out << doc.dump(1) << "\n";
}

double crop_scale(const BoundingBox& box, const CropSpec& spec) {
  const double p = spec.context * (box.w + box.h);
  const double area = static_cast<double>(spec.exemplar_side) * spec.exemplar_side;
  return std::sqrt(area / ((box.w + 2.0 * p) * (box.h + 2.0 * p)));
}

double exemplar_window(const BoundingBox& box, const CropSpec& spec) {
  return spec.exemplar_side / crop_scale(box, spec);
}

double search_window(const BoundingBox& box, const CropSpec& spec) {
  return spec.search_side / crop_scale(box, spec);
}

Image extract_crop(const Image& image, double cx, double cy, double side, int out_side,
                   const std::array<float, 3>& fill, CropStats* stats) {
  if (out_side < 1) throw ConfigError("extract_crop: output side must be positive");
  if (!(side > 0.0)) throw ConfigError("extract_crop: window side must be positive");
  if (image.empty()) throw IoError("extract_crop: empty source image");

  Image out(out_side, out_side);
  const double step = side / out_side;
  const double x0 = cx - 0.5 * side;
  const double y0 = cy - 0.5 * side;
  long fill_samples = 0;

  auto fetch = [&](int x, int y, int c) -> float {
    if (x < 0 || y < 0 || x >= image.width || y >= image.height) return fill[c];
    return image.at(x, y, c);
  };

  for (int i = 0; i < out_side; ++i) {
    const double sy = y0 + (i + 0.5) * step;
    const double v = sy - 0.5;
    const double fy0 = std::floor(v);
    const double ty = v - fy0;
    const int iy = static_cast<int>(fy0);
    const bool row_outside = sy < 0.0 || sy >= image.height;
    for (int j = 0; j < out_side; ++j) {
      const double sx = x0 + (j + 0.5) * step;
      const double u = sx - 0.5;
      const double fx0 = std::floor(u);
      const double tx = u - fx0;
      const int ix = static_cast<int>(fx0);
      if (row_outside || sx < 0.0 || sx >= image.width) ++fill_samples;
      for (int c = 0; c < Image::kChannels; ++c) {
        const double top = (1.0 - tx) * fetch(ix, iy, c) + tx * fetch(ix + 1, iy, c);
        const double bottom = (1.0 - tx) * fetch(ix, iy + 1, c) + tx * fetch(ix + 1, iy + 1, c);
        out.at(j, i, c) = static_cast<float>((1.0 - ty) * top + ty * bottom);
      }
    }
  }
  if (stats) {
    stats->fill_samples = fill_samples;
    stats->total_samples = static_cast<long>(out_side) * out_side;
  }
  return out;
}

Image extract_crop(const Image& image, double cx, double cy, double side, int out_side,
                   CropStats* stats) {
  return extract_crop(image, cx, cy, side, out_side, image.mean_rgb(), stats);
}

std::size_t CuratedDataset::frame_count() const {
  std::size_t total = 0;
  for (const auto& v : videos) {
    for (const auto& o : v.objects) total += o.frames.size();
  }
  return total;
}

namespace {

struct CropJob {
  std::size_t sequence = 0;
  std::size_t frame = 0;
};

struct CropRecord {
  std::string video_id;
  int object_id = 0;
  CuratedFrame frame;
};

json record_json(const CropRecord& r) {
  return json{{"video_id", r.video_id},
              {"object_id", r.object_id},
              {"frame_index", r.frame.frame_index},
              {"exemplar", r.frame.exemplar_file},
              {"search", r.frame.search_file},
              {"cx", r.frame.box.cx},
              {"cy", r.frame.box.cy},
              {"w", r.frame.box.w},
              {"h", r.frame.box.h},
              {"scale", r.frame.scale}};
}

void add_record(CuratedDataset& ds, std::map<std::string, std::size_t>& video_slots,
                const std::string& video_id, int object_id, CuratedFrame frame) {
  auto [it, inserted] = video_slots.try_emplace(video_id, ds.videos.size());
  if (inserted) ds.videos.push_back({video_id, {}});
  auto& video = ds.videos[it->second];
  auto obj = std::find_if(video.objects.begin(), video.objects.end(),
                          [&](const CuratedObject& o) { return o.object_id == object_id; });
  if (obj == video.objects.end()) {
    video.objects.push_back({object_id, {}});
    obj = std::prev(video.objects.end());
  }
  obj->frames.push_back(std::move(frame));
}

void sort_dataset(CuratedDataset& ds) {
  for (auto& v : ds.videos) {
    std::sort(v.objects.begin(), v.objects.end(),
              [](const CuratedObject& a, const CuratedObject& b) { return a.object_id < b.object_id; });
    for (auto& o : v.objects) {
      std::sort(o.frames.begin(), o.frames.end(), [](const CuratedFrame& a, const CuratedFrame& b) {
        return a.frame_index < b.frame_index;
      });
    }
  }
}

}  // namespace

CuratedDataset curate(std::span<const SequenceAnnotation> sequences,
                      const std::filesystem::path& out_dir, const CropSpec& spec) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create curation store " + out_dir.string() + ": " + ec.message());

  std::vector<CropJob> jobs;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    validate(sequences[s]);
    for (std::size_t f = 0; f < sequences[s].frames.size(); ++f) jobs.push_back({s, f});
  }

  std::vector<std::vector<CropRecord>> results(jobs.size());
  parallel_for(0, static_cast<int>(jobs.size()), [&](int j) {
    const SequenceAnnotation& seq = sequences[jobs[j].sequence];
    const FrameAnnotation& frame = seq.frames[jobs[j].frame];
    std::optional<Image> image;
    std::array<float, 3> mean{};
    for (const auto& obj : frame.objects) {
      if (!obj.present) {
        spdlog::info("curate: {} frame {} object {} absent, skipped", seq.video_id, frame.index,
                     obj.object_id);
        continue;
      }
      if (!image) {
        image = read_png(seq.image_file(frame));
        mean = image->mean_rgb();
      }
      const std::string rel_dir = fmt::format("{}/obj{}", seq.video_id, obj.object_id);
      std::filesystem::create_directories(out_dir / rel_dir);
      CropRecord rec;
      rec.video_id = seq.video_id;
      rec.object_id = obj.object_id;
      rec.frame.frame_index = frame.index;
      rec.frame.box = obj.box;
      rec.frame.scale = crop_scale(obj.box, spec);
      rec.frame.exemplar_file = fmt::format("{}/{:06d}.z.png", rel_dir, frame.index);
      rec.frame.search_file = fmt::format("{}/{:06d}.x.png", rel_dir, frame.index);
      write_png(extract_crop(*image, obj.box.cx, obj.box.cy, exemplar_window(obj.box, spec),
                             spec.exemplar_side, mean),
                out_dir / rec.frame.exemplar_file);
      write_png(extract_crop(*image, obj.box.cx, obj.box.cy, search_window(obj.box, spec),
                             spec.search_side, mean),
                out_dir / rec.frame.search_file);
      results[j].push_back(std::move(rec));
    }
  });

  CuratedDataset ds;
  ds.root = out_dir;
  std::map<std::string, std::size_t> slots;
  std::ofstream index(out_dir / kCurationIndexFile, std::ios::trunc);
  if (!index) throw IoError("cannot write " + (out_dir / kCurationIndexFile).string());
  for (auto& per_job : results) {
    for (auto& rec : per_job) {
      index << record_json(rec).dump() << "\n";
      add_record(ds, slots, rec.video_id, rec.object_id, std::move(rec.frame));
    }
  }
  if (!index) throw IoError("failed writing curation index");
  sort_dataset(ds);
  return ds;
}

CuratedDataset load_curated(const std::filesystem::path& root) {
  std::ifstream in(root / kCurationIndexFile);
  if (!in) throw IoError("no curation index in " + root.string());
  CuratedDataset ds;
  ds.root = root;
  std::map<std::string, std::size_t> slots;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json r = json::parse(line);
      CuratedFrame frame;
      frame.frame_index = r.at("frame_index").get<int>();
      frame.exemplar_file = r.at("exemplar").get<std::string>();
      frame.search_file = r.at("search").get<std::string>();
      frame.box = {r.at("cx").get<double>(), r.at("cy").get<double>(), r.at("w").get<double>(),
                   r.at("h").get<double>()};
      frame.scale = r.at("scale").get<double>();
      add_record(ds, slots, r.at("video_id").get<std::string>(), r.at("object_id").get<int>(),
                 std::move(frame));
    } catch (const json::exception& e) {
      throw FormatError("curation index line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  sort_dataset(ds);
  return ds;
}

CuratedDataset subset_videos(const CuratedDataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("subset fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  std::vector<std::size_t> order(dataset.videos.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * dataset.videos.size() - 1e-9)));
  order.resize(std::min(keep, order.size()));
  std::sort(order.begin(), order.end());
  CuratedDataset out;
  out.root = dataset.root;
  for (std::size_t i : order) out.videos.push_back(dataset.videos[i]);
  return out;
}

PairSampler::PairSampler(const CuratedDataset& dataset, int max_gap) : max_gap_(max_gap) {
  if (max_gap < 1) throw ConfigError("pair sampler: maximum frame gap T must be >= 1");
  for (std::size_t v = 0; v < dataset.videos.size(); ++v) {
    VideoPairs vp;
    vp.video = static_cast<int>(v);
    const auto& objects = dataset.videos[v].objects;
    for (std::size_t o = 0; o < objects.size(); ++o) {
      const auto& frames = objects[o].frames;
      std::map<int, std::vector<std::pair<int, int>>> by_gap;
      for (std::size_t a = 0; a < frames.size(); ++a) {
        for (std::size_t b = a + 1; b < frames.size(); ++b) {
          const int gap = frames[b].frame_index - frames[a].frame_index;
          if (gap > max_gap) break;
          by_gap[gap].emplace_back(static_cast<int>(a), static_cast<int>(b));
        }
      }
      if (by_gap.empty()) continue;
      ObjectPairs op;
      op.object = static_cast<int>(o);
      for (auto& [gap, pairs] : by_gap) op.pairs_by_gap.push_back(std::move(pairs));
      vp.objects.push_back(std::move(op));
    }
    if (!vp.objects.empty()) videos_.push_back(std::move(vp));
  }
  if (videos_.empty()) {
    throw ConfigError("pair sampler: dataset has no object with two frames at most " +
                      std::to_string(max_gap) + " apart");
  }
}

PairIndex PairSampler::sample(std::mt19937_64& rng) const {
  auto pick = [&rng](std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  };
  const VideoPairs& video = videos_[pick(videos_.size())];
  const ObjectPairs& object = video.objects[pick(video.objects.size())];
  const auto& pairs = object.pairs_by_gap[pick(object.pairs_by_gap.size())];
  const auto [earlier, later] = pairs[pick(pairs.size())];
  const bool swap = pick(2) == 1;
  return {video.video, object.object, swap ? later : earlier, swap ? earlier : later};
}

TrainingPair load_pair(const CuratedDataset& dataset, const PairIndex& index, bool grayscale) {
  const auto& frames = dataset.videos.at(index.video).objects.at(index.object).frames;
  TrainingPair pair;
  pair.index = index;
  pair.grayscale = grayscale;
  pair.exemplar = read_png(dataset.root / frames.at(index.exemplar_frame).exemplar_file);
  pair.search = read_png(dataset.root / frames.at(index.search_frame).search_file);
  if (grayscale) {
    pair.exemplar = to_grayscale(pair.exemplar);
    pair.search = to_grayscale(pair.search);
  }
  return pair;
}

TrainingPair sample_pair(const CuratedDataset& dataset, int max_gap, double grayscale_prob,
                         std::mt19937_64& rng) {
  const PairSampler sampler(dataset, max_gap);
  const PairIndex index = sampler.sample(rng);
  const bool gray = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < grayscale_prob;
  return load_pair(dataset, index, gray);
}

}  // namespace siamfc
