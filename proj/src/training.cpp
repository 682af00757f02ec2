#include "siamfc/training.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "siamfc/error.hpp"
#include "siamfc/model_io.hpp"

namespace siamfc {

using json = nlohmann::json;

int LabelMap::positives() const {
  int count = 0;
  for (float l : labels) count += l > 0.0f;
  return count;
}

LabelMap make_label_map(int height, int width, int stride, double radius) {
  if (height < 1 || width < 1 || stride < 1 || radius < 0.0) {
    throw ConfigError("label map needs positive dims and stride and a non-negative radius");
  }
  LabelMap map;
  map.height = height;
  map.width = width;
  map.stride = stride;
  map.radius = radius;
  map.center_y = height / 2;
  map.center_x = width / 2;
  const std::size_t cells = static_cast<std::size_t>(height) * width;
  map.labels.resize(cells);
  map.weights.resize(cells);
  int pos = 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dist = stride * std::hypot(y - map.center_y, x - map.center_x);
      const bool positive = dist <= radius;
      map.labels[static_cast<std::size_t>(y) * width + x] = positive ? 1.0f : -1.0f;
      pos += positive;
    }
  }
  const int neg = static_cast<int>(cells) - pos;
  const double w_pos = neg == 0 ? 1.0 / pos : 0.5 / pos;
  const double w_neg = pos == 0 ? 1.0 / neg : 0.5 / std::max(neg, 1);
  for (std::size_t i = 0; i < cells; ++i) {
    map.weights[i] = static_cast<float>(map.labels[i] > 0 ? w_pos : w_neg);
  }
  return map;
}

double logistic_loss(double v, double y) {
  const double z = -y * v;
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double logistic_loss_grad(double v, double y) {
  const double z = -y * v;
  // sigmoid(z) without overflow on either tail.
  const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return -y * s;
}

namespace {
void check_map(std::span<const float> scores, const LabelMap& labels) {
  if (scores.size() != labels.labels.size()) {
    throw ShapeError("map_loss: score map has " + std::to_string(scores.size()) +
                     " cells, label map " + std::to_string(labels.height) + "x" +
                     std::to_string(labels.width));
  }
}
}  // namespace

double map_loss(std::span<const float> scores, const LabelMap& labels) {
  check_map(scores, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    total += labels.weights[i] * logistic_loss(scores[i], labels.labels[i]);
  }
  return total;
}

std::vector<float> map_loss_grad(std::span<const float> scores, const LabelMap& labels) {
  check_map(scores, labels);
  std::vector<float> grad(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    grad[i] = static_cast<float>(labels.weights[i] *
                                 logistic_loss_grad(scores[i], labels.labels[i]));
  }
  return grad;
}

void TrainConfig::validate() const {
  arch_for_preset(preset);
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (pairs_per_epoch < 1) throw ConfigError("pairs_per_epoch must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (!(lr_end > 0.0) || lr_start < lr_end) {
    throw ConfigError("learning rates must satisfy lr_start >= lr_end > 0");
  }
  if (max_gap < 1) throw ConfigError("max_gap (T) must be >= 1");
  if (radius < 0.0) throw ConfigError("radius (R) must be non-negative");
  if (grayscale < 0.0 || grayscale > 1.0) throw ConfigError("grayscale fraction must lie in [0, 1]");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
}

double lr_at(int epoch, const TrainConfig& config) {
  if (epoch < 0 || epoch >= config.epochs) {
    throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(config.epochs) + ")");
  }
  if (config.epochs == 1) return config.lr_start;
  const double t = static_cast<double>(epoch) / (config.epochs - 1);
  return config.lr_start * std::pow(config.lr_end / config.lr_start, t);
}

BatchGradients compute_gradients(SiameseModel& model, std::span<const TrainSample> batch) {
  if (batch.empty()) throw ConfigError("sgd_step: empty batch");
  std::vector<Tensor> zs, xs;
  zs.reserve(batch.size());
  xs.reserve(batch.size());
  for (const auto& s : batch) {
    zs.push_back(s.exemplar);
    xs.push_back(s.search);
  }
  const Tensor z = concat_batch(zs);
  const Tensor x = concat_batch(xs);

  ForwardTape tape_z, tape_x;
  const Tensor fz = embed(model.net, z, Mode::Train, &tape_z);
  const Tensor fx = embed(model.net, x, Mode::Train, &tape_x);
  Tensor scores = xcorr(fz, fx);
  for (float& v : scores.values()) v += model.bias.b;

  const int n = static_cast<int>(batch.size());
  const std::size_t cells = scores.shape().plane();
  Tensor grad_scores(scores.shape());
  BatchGradients out;
  for (int i = 0; i < n; ++i) {
    std::span<const float> item(scores.plane(i, 0), cells);
    out.loss += map_loss(item, batch[i].labels) / n;
    const auto g = map_loss_grad(item, batch[i].labels);
    float* dst = grad_scores.plane(i, 0);
    for (std::size_t k = 0; k < cells; ++k) {
      dst[k] = g[k] / static_cast<float>(n);
      out.bias += dst[k];
    }
  }
  if (!std::isfinite(out.loss)) {
    throw NumericError("non-finite training loss (" + std::to_string(out.loss) + ")");
  }

  const XcorrGrads xg = xcorr_backward(fz, fx, grad_scores);
  out.net = embed_backward(model.net, tape_z, xg.exemplar);
  out.net.accumulate(embed_backward(model.net, tape_x, xg.search));
  return out;
}

double sgd_step(SiameseModel& model, std::span<const TrainSample> batch, double lr,
                SgdState* state) {
  BatchGradients grads = compute_gradients(model, batch);
  const bool use_momentum = state && state->momentum > 0.0;
  if (use_momentum && state->velocity.layers.empty()) {
    state->velocity = NetGrads::zeros_like(model.net);
  }

  auto update = [&](std::span<float> params, std::span<const float> g, std::span<float> vel) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (use_momentum) {
        vel[i] = static_cast<float>(state->momentum * vel[i] + g[i]);
        params[i] = static_cast<float>(params[i] - lr * vel[i]);
      } else {
        params[i] = static_cast<float>(params[i] - lr * g[i]);
      }
    }
  };

  for (std::size_t li = 0; li < model.net.layers.size(); ++li) {
    Layer& layer = model.net.layers[li];
    const LayerGrads& g = grads.net.layers[li];
    LayerGrads* v = use_momentum ? &state->velocity.layers[li] : nullptr;
    if (layer.kind == LayerKind::Conv) {
      update(layer.weights.values(), g.weights.values(),
             v ? v->weights.values() : std::span<float>{});
      update(layer.bias, g.bias, v ? std::span<float>(v->bias) : std::span<float>{});
    } else if (layer.kind == LayerKind::BatchNorm) {
      update(layer.bn.gamma, g.gamma, v ? std::span<float>(v->gamma) : std::span<float>{});
      update(layer.bn.beta, g.beta, v ? std::span<float>(v->beta) : std::span<float>{});
    }
  }
  if (use_momentum) {
    state->bias_velocity = state->momentum * state->bias_velocity + grads.bias;
    model.bias.b = static_cast<float>(model.bias.b - lr * state->bias_velocity);
  } else {
    model.bias.b = static_cast<float>(model.bias.b - lr * grads.bias);
  }
  return grads.loss;
}

std::string checkpoint_name(int epoch) { return fmt::format("epoch_{:03d}.sfcm", epoch); }

namespace {

constexpr std::uint64_t kSamplerSeedSalt = 0x5DEECE66DULL;

json config_json(const TrainConfig& c) {
  return json{{"preset", c.preset},         {"epochs", c.epochs},
              {"pairs_per_epoch", c.pairs_per_epoch},
              {"batch", c.batch},           {"lr_start", c.lr_start},
              {"lr_end", c.lr_end},         {"max_gap", c.max_gap},
              {"radius", c.radius},         {"grayscale", c.grayscale},
              {"momentum", c.momentum},     {"seed", c.seed}};
}

// Momentum buffers reuse the model format: velocity values in parameter slots.
SiameseModel velocity_as_model(const EmbeddingNet& net, const SgdState& state) {
  SiameseModel m{net, ScoreBias{static_cast<float>(state.bias_velocity)}};
  for (std::size_t li = 0; li < m.net.layers.size(); ++li) {
    Layer& layer = m.net.layers[li];
    const LayerGrads& v = state.velocity.layers[li];
    if (layer.kind == LayerKind::Conv) {
      layer.weights = v.weights;
      layer.bias = v.bias;
    } else if (layer.kind == LayerKind::BatchNorm) {
      layer.bn.gamma = v.gamma;
      layer.bn.beta = v.beta;
    }
  }
  return m;
}

void restore_velocity(const SiameseModel& vm, SgdState& state) {
  state.velocity = NetGrads::zeros_like(vm.net);
  state.bias_velocity = vm.bias.b;
  for (std::size_t li = 0; li < vm.net.layers.size(); ++li) {
    const Layer& layer = vm.net.layers[li];
    LayerGrads& v = state.velocity.layers[li];
    if (layer.kind == LayerKind::Conv) {
      v.weights = layer.weights;
      v.bias = layer.bias;
    } else if (layer.kind == LayerKind::BatchNorm) {
      v.gamma = layer.bn.gamma;
      v.beta = layer.bn.beta;
    }
  }
}

std::filesystem::path sidecar_of(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  return p.replace_extension(".json");
}

std::filesystem::path velocity_of(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  return p.replace_extension(".velocity.sfcm");
}

}  // namespace

TrainResult train(const CuratedDataset& dataset, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  const CropSpec crop;
  const PairSampler sampler(dataset, config.max_gap);

  TrainResult result;
  result.model.net = init_params(build_net(config.preset), config.seed);
  std::mt19937_64 rng(config.seed ^ kSamplerSeedSalt);
  SgdState sgd;
  sgd.momentum = config.momentum;
  int first_epoch = 0;

  if (options.resume_from) {
    const auto& ckpt = *options.resume_from;
    result.model = load_model(ckpt, config.preset);
    std::ifstream side(sidecar_of(ckpt));
    if (!side) throw IoError("missing checkpoint sidecar " + sidecar_of(ckpt).string());
    const json meta = json::parse(side);
    first_epoch = meta.at("epoch").get<int>();
    std::istringstream state(meta.at("rng_state").get<std::string>());
    state >> rng;
    if (config.momentum > 0.0 && meta.value("has_velocity", false)) {
      restore_velocity(load_model(velocity_of(ckpt)), sgd);
    }
    spdlog::info("train: resuming after epoch {}", first_epoch);
  }

  std::ofstream log_out;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir / "checkpoints");
    log_out.open(*options.out_dir / "train_log.jsonl",
                 first_epoch > 0 ? std::ios::app : std::ios::trunc);
    if (!log_out) throw IoError("cannot write training log in " + options.out_dir->string());
  }

  const auto shapes_z = result.model.net.infer_shapes(crop.exemplar_side, crop.exemplar_side);
  const auto shapes_x = result.model.net.infer_shapes(crop.search_side, crop.search_side);
  const int map_h = shapes_x.back().height - shapes_z.back().height + 1;
  const int map_w = shapes_x.back().width - shapes_z.back().width + 1;
  const LabelMap labels =
      make_label_map(map_h, map_w, result.model.net.total_stride(), config.radius);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  int epochs_run = 0;
  for (int epoch = first_epoch; epoch < config.epochs; ++epoch) {
    if (options.stop_after_epochs && epochs_run >= *options.stop_after_epochs) break;
    const auto start = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, config);
    double loss_sum = 0.0;
    int remaining = config.pairs_per_epoch;
    while (remaining > 0) {
      const int count = std::min(config.batch, remaining);
      std::vector<TrainSample> batch;
      batch.reserve(count);
      for (int i = 0; i < count; ++i) {
        const PairIndex idx = sampler.sample(rng);
        const bool gray = config.grayscale > 0.0 && unit(rng) < config.grayscale;
        const TrainingPair pair = load_pair(dataset, idx, gray);
        batch.push_back({to_tensor(pair.exemplar), to_tensor(pair.search), labels});
      }
      loss_sum += sgd_step(result.model, batch, lr, &sgd) * count;
      remaining -= count;
    }
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    const EpochLog entry{epoch, loss_sum / config.pairs_per_epoch, lr, wall_ms};
    result.log.push_back(entry);
    ++epochs_run;
    spdlog::info("train: epoch {} loss {:.5f} lr {:.3g} ({:.0f} ms)", epoch, entry.mean_loss,
                 lr, wall_ms);

    if (options.out_dir) {
      log_out << json{{"epoch", entry.epoch}, {"mean_loss", entry.mean_loss},
                      {"lr", entry.lr},       {"wall_ms", entry.wall_ms}}
                     .dump()
              << "\n";
      log_out.flush();
      const auto ckpt = *options.out_dir / "checkpoints" / checkpoint_name(epoch + 1);
      save_model(result.model, ckpt);
      std::ostringstream state;
      state << rng;
      const bool has_velocity = sgd.momentum > 0.0 && !sgd.velocity.layers.empty();
      if (has_velocity) save_model(velocity_as_model(result.model.net, sgd), velocity_of(ckpt));
      std::ofstream side(sidecar_of(ckpt), std::ios::trunc);
      side << json{{"epoch", epoch + 1},
                   {"lr", lr},
                   {"rng_state", state.str()},
                   {"has_velocity", has_velocity},
                   {"config", config_json(config)}}
                  .dump(1)
           << "\n";
      result.checkpoints.push_back(ckpt);
    }
    if (options.on_epoch) options.on_epoch(entry);
  }

  if (options.out_dir) save_model(result.model, *options.out_dir / "model.sfcm");
  return result;
}

}  // namespace siamfc
