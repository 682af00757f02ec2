#include "siamfc/synthdata.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <random>

#include "siamfc/error.hpp"
#include "siamfc/parallel.hpp"

namespace siamfc {

using json = nlohmann::json;

const char* to_string(Texture t) {
  switch (t) {
    case Texture::Checker: return "checker";
    case Texture::Noise: return "noise";
    case Texture::GradientDisc: return "gradient-disc";
  }
  return "?";
}

const char* to_string(Motion m) {
  return m == Motion::Constant ? "constant" : "sinusoidal";
}

Texture texture_from_string(std::string_view s) {
  if (s == "checker") return Texture::Checker;
  if (s == "noise") return Texture::Noise;
  if (s == "gradient-disc") return Texture::GradientDisc;
  throw ConfigError("unknown texture '" + std::string(s) + "' (checker|noise|gradient-disc)");
}

Motion motion_from_string(std::string_view s) {
  if (s == "constant") return Motion::Constant;
  if (s == "sinusoidal") return Motion::Sinusoidal;
  throw ConfigError("unknown motion '" + std::string(s) + "' (constant|sinusoidal)");
}

void SynthConfig::validate() const {
  if (canvas < 32) throw ConfigError("canvas must be >= 32");
  if (object_count < 1) throw ConfigError("object_count must be >= 1");
  if (frames < 1) throw ConfigError("frames must be >= 1");
  if (min_size < 4 || max_size < min_size) {
    throw ConfigError("object sizes must satisfy 4 <= min_size <= max_size");
  }
  if (max_size > canvas - 4) throw ConfigError("max_size must leave room inside the canvas");
  if (clutter < 0.0 || clutter > 1.0) throw ConfigError("clutter must lie in [0, 1]");
  if (spin < 0.0) throw ConfigError("spin must be non-negative");
  if (illumination < 0.0 || illumination > 1.0) throw ConfigError("illumination must lie in [0, 1]");
  if (!(period > 0.0)) throw ConfigError("period must be positive");
  if (scale_drift <= -0.5 || scale_drift >= 0.5) throw ConfigError("scale_drift must lie in (-0.5, 0.5)");
}

namespace {

using Color = std::array<float, 3>;

// Platform-independent uniform draws (std distributions are not portable).
double u01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * u01(rng); }
int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

Color random_color(std::mt19937_64& rng, double lo = 0.0, double hi = 255.0) {
  return {static_cast<float>(uniform(rng, lo, hi)), static_cast<float>(uniform(rng, lo, hi)),
          static_cast<float>(uniform(rng, lo, hi))};
}

Color contrasting(const Color& c, std::mt19937_64& rng) {
  Color out;
  for (int k = 0; k < 3; ++k) {
    out[k] = static_cast<float>(std::clamp(255.0 - c[k] + uniform(rng, -40, 40), 0.0, 255.0));
  }
  return out;
}

Color lerp(const Color& a, const Color& b, double t) {
  return {static_cast<float>(a[0] + (b[0] - a[0]) * t), static_cast<float>(a[1] + (b[1] - a[1]) * t),
          static_cast<float>(a[2] + (b[2] - a[2]) * t)};
}

/// Coarse grid of colours sampled bilinearly over [0, 1]^2.
struct ColorField {
  int n = 0;
  std::vector<Color> grid;

  ColorField(int n_, std::mt19937_64& rng, double lo, double hi) : n(n_), grid(n_ * n_) {
    for (auto& c : grid) {
      for (auto& v : c) v = static_cast<float>(uniform(rng, lo, hi));
    }
  }

  Color at(double u, double v) const {
    const double gx = std::clamp(u, 0.0, 1.0) * (n - 1);
    const double gy = std::clamp(v, 0.0, 1.0) * (n - 1);
    const int x0 = std::min(static_cast<int>(gx), n - 2);
    const int y0 = std::min(static_cast<int>(gy), n - 2);
    const double fx = gx - x0, fy = gy - y0;
    const Color top = lerp(grid[y0 * n + x0], grid[y0 * n + x0 + 1], fx);
    const Color bot = lerp(grid[(y0 + 1) * n + x0], grid[(y0 + 1) * n + x0 + 1], fx);
    return lerp(top, bot, fy);
  }
};

struct Pattern {
  Texture texture = Texture::Checker;
  Color a{}, b{};
  int cells_x = 4, cells_y = 4;
  int spokes = 6;
  ColorField field;

  Pattern(Texture t, std::mt19937_64& rng)
      : texture(t), a(random_color(rng)), b(contrasting(a, rng)),
        cells_x(uniform_int(rng, 3, 6)), cells_y(uniform_int(rng, 3, 6)),
        spokes(uniform_int(rng, 3, 8)), field(5, rng, 0.0, 255.0) {}

  /// Both colours drawn from [lo, hi]; used for bright, salient clutter.
  Pattern(Texture t, std::mt19937_64& rng, double lo, double hi)
      : texture(t), a(random_color(rng, lo, hi)), b(random_color(rng, lo, hi)),
        cells_x(uniform_int(rng, 3, 6)), cells_y(uniform_int(rng, 3, 6)),
        spokes(uniform_int(rng, 3, 8)), field(5, rng, lo, hi) {}

  /// Colour at local coordinates (u, v) in [0, 1)^2, or false if the point is
  /// outside the shape.
  bool sample(double u, double v, Color& out) const {
    switch (texture) {
      case Texture::Checker: {
        const int cx = static_cast<int>(u * cells_x), cy = static_cast<int>(v * cells_y);
        out = (cx + cy) % 2 ? a : b;
        return true;
      }
      case Texture::Noise:
        out = field.at(u, v);
        return true;
      case Texture::GradientDisc: {
        const double dx = 2.0 * u - 1.0, dy = 2.0 * v - 1.0;
        const double r2 = dx * dx + dy * dy;
        if (r2 > 1.0) return false;
        out = lerp(a, b, std::sqrt(r2));
        if (std::sin(spokes * std::atan2(dy, dx)) > 0.0) {
          for (auto& c : out) c *= 0.6f;
        }
        return true;
      }
    }
    return false;
  }
};

void paint(Image& img, const BoundingBox& box, const Pattern& pattern, double angle = 0.0,
           std::vector<std::uint8_t>* mask = nullptr) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  const int x0 = std::max(0, static_cast<int>(std::floor(box.left())));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.top())));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(box.left() + box.w)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(box.top() + box.h)));
  Color c;
  for (int y = y0; y <= y1; ++y) {
    const double v = (y + 0.5 - box.top()) / box.h;
    if (v < 0.0 || v >= 1.0) continue;
    for (int x = x0; x <= x1; ++x) {
      const double u = (x + 0.5 - box.left()) / box.w;
      if (u < 0.0 || u >= 1.0) continue;
      const double ru = 0.5 + ca * (u - 0.5) - sa * (v - 0.5);
      const double rv = 0.5 + sa * (u - 0.5) + ca * (v - 0.5);
      if (pattern.texture == Texture::GradientDisc) {
        // The disc outline stays fixed; only its interior pattern turns.
        const double du = 2.0 * u - 1.0, dv = 2.0 * v - 1.0;
        if (du * du + dv * dv > 1.0) continue;
      }
      if (!pattern.sample(std::clamp(ru, 0.0, 0.999999), std::clamp(rv, 0.0, 0.999999), c)) {
        continue;
      }
      for (int k = 0; k < 3; ++k) img.at(x, y, k) = c[k];
      if (mask) (*mask)[static_cast<std::size_t>(y) * img.width + x] = 1;
    }
  }
}

double reflect(double p, double lo, double hi) {
  if (hi <= lo) return 0.5 * (lo + hi);
  const double span = hi - lo;
  double m = std::fmod(p - lo, 2.0 * span);
  if (m < 0.0) m += 2.0 * span;
  return lo + (m <= span ? m : 2.0 * span - m);
}

struct Mover {
  Pattern pattern;
  Motion motion = Motion::Constant;
  double w0 = 0.0, h0 = 0.0;
  double cx0 = 0.0, cy0 = 0.0;
  double vx = 0.0, vy = 0.0;
  double phase = 0.0;
  double spin = 0.0;  // texture rotation, rad/frame
};

BoundingBox box_at(const Mover& m, const SynthConfig& cfg, int t) {
  const double limit = cfg.canvas - 4.0;
  const double growth = std::pow(1.0 + cfg.scale_drift, t);
  const double s = std::clamp(growth, 8.0 / std::min(m.w0, m.h0), limit / std::max(m.w0, m.h0));
  const double w = m.w0 * s, h = m.h0 * s;
  double cx, cy;
  if (m.motion == Motion::Constant) {
    cx = m.cx0 + m.vx * t;
    cy = m.cy0 + m.vy * t;
  } else {
    const double norm = std::hypot(m.vx, m.vy);
    const double dx = norm > 0.0 ? m.vx / norm : 1.0, dy = norm > 0.0 ? m.vy / norm : 0.0;
    const double off = cfg.amplitude * std::sin(2.0 * std::numbers::pi * t / cfg.period + m.phase);
    cx = m.cx0 + dx * off;
    cy = m.cy0 + dy * off;
  }
  cx = reflect(cx, 0.5 * w + 1.0, cfg.canvas - 0.5 * w - 1.0);
  cy = reflect(cy, 0.5 * h + 1.0, cfg.canvas - 0.5 * h - 1.0);
  return {cx, cy, w, h};
}

Texture pick_texture(std::mt19937_64& rng) { return static_cast<Texture>(uniform_int(rng, 0, 2)); }

}  // namespace

SynthSequence gen_sequence(const SynthConfig& config, const std::string& video_id) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const int n = config.canvas;

  Image background(n, n);
  const ColorField sky(6, rng, 40.0, 215.0);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const Color c = sky.at((x + 0.5) / n, (y + 0.5) / n);
      for (int k = 0; k < 3; ++k) {
        background.at(x, y, k) = static_cast<float>(c[k] + uniform(rng, -10.0, 10.0));
      }
    }
  }
  const int distractors = static_cast<int>(std::lround(config.clutter * 6.0));
  for (int i = 0; i < distractors; ++i) {
    const Pattern p(pick_texture(rng), rng, 150.0, 255.0);
    const double w = uniform(rng, 15.0, 50.0), h = uniform(rng, 15.0, 50.0);
    paint(background, {uniform(rng, 0.0, n), uniform(rng, 0.0, n), w, h}, p);
  }
  std::vector<Mover> drifting;
  const int moving = static_cast<int>(std::lround(config.clutter * 10.0));
  for (int i = 0; i < moving; ++i) {
    Mover m{Pattern(pick_texture(rng), rng, 150.0, 255.0)};
    m.w0 = uniform(rng, 20.0, 60.0);
    m.h0 = uniform(rng, 20.0, 60.0);
    m.cx0 = uniform(rng, 0.0, n);
    m.cy0 = uniform(rng, 0.0, n);
    const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double speed = uniform(rng, 0.5, 3.0);
    m.vx = speed * std::cos(angle);
    m.vy = speed * std::sin(angle);
    drifting.push_back(std::move(m));
  }

  std::vector<Mover> movers;
  for (int i = 0; i < config.object_count; ++i) {
    Mover m{Pattern(i == 0 ? config.texture : pick_texture(rng), rng), config.motion};
    m.w0 = uniform(rng, config.min_size, config.max_size);
    m.h0 = uniform(rng, config.min_size, config.max_size);
    m.cx0 = uniform(rng, 0.5 * m.w0 + 1.0, n - 0.5 * m.w0 - 1.0);
    m.cy0 = uniform(rng, 0.5 * m.h0 + 1.0, n - 0.5 * m.h0 - 1.0);
    if (i == 0) {
      m.vx = config.velocity_x;
      m.vy = config.velocity_y;
    } else {
      const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double speed = std::hypot(config.velocity_x, config.velocity_y);
      m.vx = speed * std::cos(angle);
      m.vy = speed * std::sin(angle);
    }
    m.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    m.spin = uniform(rng, -config.spin, config.spin);
    movers.push_back(std::move(m));
  }

  std::array<double, 6> light_phase{}, light_period{};
  for (int k = 0; k < 6; ++k) {
    light_phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    light_period[k] = uniform(rng, 15.0, 45.0);
  }
  auto wave = [&](int k, int t) {
    return std::sin(2.0 * std::numbers::pi * t / light_period[k] + light_phase[k]);
  };

  SynthSequence seq;
  seq.annotation.video_id = video_id;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n) * n, 0);
  for (int t = 0; t < config.frames; ++t) {
    Image frame = background;
    FrameAnnotation fa;
    fa.index = t;
    fa.image_path = fmt::format("frame_{:06d}.png", t);
    for (const auto& d : drifting) paint(frame, box_at(d, config, t), d.pattern);
    for (int i = 0; i < config.object_count; ++i) {
      const BoundingBox box = box_at(movers[i], config, t);
      if (i == 0) {
        // Later objects may cover the first one.
        std::fill(mask.begin(), mask.end(), 0);
        paint(frame, box, movers[i].pattern, movers[i].spin * t, &mask);
      } else {
        std::vector<std::uint8_t> cover(mask.size(), 0);
        paint(frame, box, movers[i].pattern, movers[i].spin * t, &cover);
        for (std::size_t k = 0; k < mask.size(); ++k) mask[k] &= static_cast<std::uint8_t>(!cover[k]);
      }
      fa.objects.push_back({i, box, true});
    }
    std::array<float, 3> gain, offset;
    for (int k = 0; k < 3; ++k) {
      gain[k] = static_cast<float>(1.0 + 0.3 * config.illumination * wave(k, t));
      offset[k] = static_cast<float>(50.0 * config.illumination * wave(k + 3, t));
    }
    for (std::size_t i = 0; i < frame.pixels.size(); ++i) {
      const int k = static_cast<int>(i % 3);
      frame.pixels[i] = frame.pixels[i] * gain[k] + offset[k] +
                        static_cast<float>(uniform(rng, -4.0, 4.0));
    }
    seq.frames.push_back(quantized(std::move(frame)));
    seq.masks.push_back(mask);
    seq.annotation.frames.push_back(std::move(fa));
  }
  return seq;
}

std::uint64_t sequence_seed(std::uint64_t seed, int index, Split split) {
  return (seed << 20) + 2 * static_cast<std::uint64_t>(index) + (split == Split::Test ? 1 : 0);
}

SynthConfig varied_config(const SynthConfig& base, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
  SynthConfig cfg = base;
  cfg.seed = seed;
  cfg.texture = pick_texture(rng);
  cfg.motion = u01(rng) < 0.7 ? Motion::Constant : Motion::Sinusoidal;
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double speed = uniform(rng, 0.5, 4.0);
  cfg.velocity_x = speed * std::cos(angle);
  cfg.velocity_y = speed * std::sin(angle);
  cfg.amplitude = uniform(rng, 20.0, 60.0);
  cfg.period = uniform(rng, 20.0, 60.0);
  cfg.scale_drift = uniform(rng, -0.01, 0.01);
  return cfg;
}

namespace {

json synth_json(const SynthConfig& c) {
  return json{{"canvas", c.canvas},         {"object_count", c.object_count},
              {"texture", to_string(c.texture)}, {"motion", to_string(c.motion)},
              {"velocity_x", c.velocity_x}, {"velocity_y", c.velocity_y},
              {"amplitude", c.amplitude},   {"period", c.period},
              {"scale_drift", c.scale_drift}, {"clutter", c.clutter},
              {"illumination", c.illumination}, {"spin", c.spin},
              {"frames", c.frames},         {"min_size", c.min_size},
              {"max_size", c.max_size},     {"seed", c.seed}};
}

}  // namespace

std::vector<SequenceAnnotation> gen_dataset(int count, const SynthConfig& base,
                                            std::uint64_t seed, Split split,
                                            const std::filesystem::path& out_dir) {
  if (count < 1) throw ConfigError("gen_dataset: count must be >= 1");
  base.validate();
  const char* prefix = split == Split::Train ? "train" : "test";
  std::filesystem::create_directories(out_dir);
  std::vector<SequenceAnnotation> out(count);
  std::vector<json> entries(count);
  parallel_for(0, count, [&](int i) {
    const SynthConfig cfg = varied_config(base, sequence_seed(seed, i, split));
    const std::string id = fmt::format("{}_{:04d}", prefix, i);
    SynthSequence seq = gen_sequence(cfg, id);
    const auto dir = out_dir / id;
    std::filesystem::create_directories(dir);
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
      write_png(seq.frames[t], dir / seq.annotation.frames[t].image_path);
    }
    seq.annotation.fps = 30.0;
    write_annotation(seq.annotation, dir / kAnnotationFile);
    seq.annotation.base_dir = dir;
    out[i] = std::move(seq.annotation);
    entries[i] = json{{"video_id", id},
                      {"annotation", id + "/" + kAnnotationFile},
                      {"config", synth_json(cfg)}};
  });
  const json manifest{{"split", prefix}, {"seed", seed}, {"count", count},
                      {"template", synth_json(base)}, {"sequences", entries}};
  std::ofstream f(out_dir / kManifestFile, std::ios::trunc);
  if (!f) throw IoError("cannot write " + (out_dir / kManifestFile).string());
  f << manifest.dump(1) << "\n";
  return out;
}

std::vector<SequenceAnnotation> load_manifest(const std::filesystem::path& out_dir) {
  const auto path = out_dir / kManifestFile;
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  json manifest;
  try {
    manifest = json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  std::vector<SequenceAnnotation> out;
  for (const auto& entry : manifest.at("sequences")) {
    out.push_back(read_annotation(out_dir / entry.at("annotation").get<std::string>()));
  }
  return out;
}

}  // namespace siamfc
