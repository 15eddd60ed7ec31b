#include "uraft/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "uraft/error.hpp"
#include "uraft/optim.hpp"

namespace uraft {

namespace {

// Applies one of the eight flip/transpose symmetries to both images of a pair.
// The cyclic loss does not care about orientation, so every variant is a
// valid training pair.
Image orient(const Image& im, int code) {
  const bool transpose = code & 4, flip_x = code & 1, flip_y = code & 2;
  const int h = transpose ? im.width() : im.height();
  const int w = transpose ? im.height() : im.width();
  std::vector<float> out(im.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int sx = transpose ? y : x, sy = transpose ? x : y;
      if (flip_x) sx = im.width() - 1 - sx;
      if (flip_y) sy = im.height() - 1 - sy;
      out[static_cast<std::size_t>(y) * w + x] = im.at(sx, sy);
    }
  }
  return Image(h, w, std::move(out));
}

std::string step_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06lld.urck", static_cast<long long>(step));
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be positive");
  if (!(min_learning_rate >= 0.0)) throw ArgumentError("min_learning_rate must be >= 0");
  if (steps < 0) throw ArgumentError("steps must be >= 0");
  if (warmup_steps < 0) throw ArgumentError("warmup_steps must be >= 0");
  if (batch_size < 1) throw ArgumentError("batch_size must be positive");
  if (checkpoint_interval < 1) throw ArgumentError("checkpoint_interval must be positive");
  if (!(gradient_clip_norm > 0.0)) throw ArgumentError("gradient_clip_norm must be positive");
  if (image_size < 0) throw ArgumentError("image_size must be >= 0");
  if (!(loss.gamma > 0.0 && loss.gamma <= 1.0)) throw ArgumentError("gamma must be in (0,1]");
  if (!(loss.smoothness >= 0.0)) throw ArgumentError("lambda_s must be >= 0");
  model.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"min_learning_rate", c.min_learning_rate},
                     {"warmup_steps", c.warmup_steps},
                     {"steps", c.steps},
                     {"batch_size", c.batch_size},
                     {"loss", c.loss},
                     {"seed", c.seed},
                     {"image_size", c.image_size},
                     {"checkpoint_interval", c.checkpoint_interval},
                     {"gradient_clip_norm", c.gradient_clip_norm},
                     {"augment", c.augment},
                     {"model", c.model}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known{
      "learning_rate", "min_learning_rate",   "warmup_steps",       "steps",
      "batch_size",    "loss",                "seed",               "image_size",
      "checkpoint_interval", "gradient_clip_norm", "augment",       "model"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ArgumentError("unknown train config key: " + key);
  }
  TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.min_learning_rate = j.value("min_learning_rate", d.min_learning_rate);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.steps = j.value("steps", d.steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  if (j.contains("loss")) c.loss = j.at("loss").get<LossWeights>();
  c.seed = j.value("seed", d.seed);
  c.image_size = j.value("image_size", d.image_size);
  c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
  c.gradient_clip_norm = j.value("gradient_clip_norm", d.gradient_clip_norm);
  c.augment = j.value("augment", d.augment);
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  c.validate();
}

std::vector<TrainingPair> make_pairs(const VideoSequence& seq, PairStrategy strategy,
                                     int max_offset, std::uint64_t seed) {
  std::vector<TrainingPair> pairs;
  const int n = static_cast<int>(seq.size());
  if (strategy == PairStrategy::first_frame_anchor) {
    for (int i = 1; i < n; ++i) pairs.push_back({seq[0], seq[i]});
    return pairs;
  }
  if (max_offset < 1) throw ArgumentError("max_offset must be >= 1");
  std::mt19937_64 rng(seed);
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - max_offset), hi = std::min(n - 1, i + max_offset);
    std::uniform_int_distribution<int> pick(lo, hi - 1);
    int j = pick(rng);
    if (j >= i) ++j;  // skip i itself
    pairs.push_back({seq[i], seq[j]});
  }
  return pairs;
}

std::vector<TrainingPair> make_pairs(const std::vector<SyntheticSample>& samples) {
  std::vector<TrainingPair> pairs;
  pairs.reserve(samples.size());
  for (const auto& s : samples) pairs.push_back({s.fixed, s.moving});
  return pairs;
}

TrainState train(FlowNet<float>& net, const TrainConfig& config,
                 const std::vector<TrainingPair>& data, const StepHook& hook) {
  config.validate();
  if (config.steps > 0 && data.empty()) throw ArgumentError("training set is empty");
  for (const auto& p : data) {
    net.check_pair(p.fixed.height(), p.fixed.width(), p.moving.height(), p.moving.width());
    if (config.image_size > 0 &&
        (p.fixed.height() != config.image_size || p.fixed.width() != config.image_size)) {
      throw DimensionMismatch("training image is " + std::to_string(p.fixed.height()) + "x" +
                              std::to_string(p.fixed.width()) + ", config expects " +
                              std::to_string(config.image_size));
    }
  }

  std::optional<std::ofstream> log;
  if (config.log_path) {
    log.emplace(*config.log_path, std::ios::trunc);
    if (!*log) throw ArgumentError("cannot open training log " + config.log_path->string());
  }
  if (config.checkpoint_dir) std::filesystem::create_directories(*config.checkpoint_dir);

  auto& params = net.parameters();
  for (auto& p : params) p.var->requires_grad = true;
  Adam adam(params);
  std::mt19937_64 rng(config.seed ^ 0x5EEDC0FFEEull);
  std::uniform_int_distribution<std::size_t> pick(0, data.empty() ? 0 : data.size() - 1);
  std::uniform_int_distribution<int> symmetry(0, 7);
  const bool square = !data.empty() && data[0].fixed.height() == data[0].fixed.width();

  TrainState state;
  const auto start = std::chrono::steady_clock::now();
  for (std::int64_t step = 1; step <= config.steps; ++step) {
    const double lr = cosine_lr(step, config.steps, config.learning_rate,
                                config.min_learning_rate, config.warmup_steps);
    zero_gradients(params);
    StepRecord rec;
    rec.step = step;
    rec.lr = lr;
    const float inv_batch = 1.0f / static_cast<float>(config.batch_size);
    for (int b = 0; b < config.batch_size; ++b) {
      const auto& pair = data[pick(rng)];
      int code = config.augment ? symmetry(rng) : 0;
      if (!square) code &= 3;
      auto fixed = ag::constant(to_tensor<float>(code ? orient(pair.fixed, code) : pair.fixed));
      auto moving = ag::constant(to_tensor<float>(code ? orient(pair.moving, code) : pair.moving));
      auto obj = cyclic_objective<float>(net, fixed, moving, config.loss);
      const double value = obj.objective->value.item();
      if (!std::isfinite(value)) {
        throw DivergenceError("non-finite loss at step " + std::to_string(step));
      }
      ag::backward(ag::scale(obj.objective, inv_batch));
      rec.objective += value / config.batch_size;
      rec.loss.forward_similarity += obj.breakdown.forward_similarity / config.batch_size;
      rec.loss.backward_similarity += obj.breakdown.backward_similarity / config.batch_size;
      rec.loss.smoothness += obj.breakdown.smoothness / config.batch_size;
      rec.loss.total += obj.breakdown.total / config.batch_size;
    }
    rec.loss.lambda_s = config.loss.smoothness;
    rec.grad_norm = clip_gradients(params, config.gradient_clip_norm);
    if (!std::isfinite(rec.grad_norm)) {
      throw DivergenceError("non-finite gradient at step " + std::to_string(step));
    }
    adam.step(lr);
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    state.steps = step;
    state.history.push_back(rec);

    if (log) {
      nlohmann::json j = rec;
      *log << j.dump() << '\n';
      log->flush();
    }
    if (config.checkpoint_dir && step % config.checkpoint_interval == 0 && step != config.steps) {
      save_checkpoint(snapshot(net, state), *config.checkpoint_dir / step_name(step));
    }
    if (hook && !hook(rec)) break;
  }
  for (auto& p : params) {
    p.var->requires_grad = false;
    p.var->grad = Tensor<float>();
  }
  return state;
}

Checkpoint train(const TrainConfig& config, const std::vector<TrainingPair>& data,
                 const StepHook& hook) {
  config.validate();
  FlowNet<float> net(config.model, config.seed);
  auto state = train(net, config, data, hook);
  auto ckpt = snapshot(net, std::move(state));
  ckpt.metadata["train_config"] = config;
  if (config.checkpoint_dir) save_checkpoint(ckpt, *config.checkpoint_dir / "final.urck");
  return ckpt;
}

void to_json(nlohmann::json& j, const EpeReport& r) {
  j = nlohmann::json{
      {"mean_epe", r.mean_epe}, {"median_epe", r.median_epe}, {"per_sample", r.per_sample}};
}

EpeReport evaluate_epe(const FlowPredictor& model, const std::vector<SyntheticSample>& samples) {
  EpeReport r;
  for (const auto& s : samples) {
    if (s.field_gt.empty()) throw ArgumentError("evaluation sample lacks a ground-truth field");
    r.per_sample.push_back(mean_endpoint_error(model.predict(s.fixed, s.moving), s.field_gt));
  }
  if (r.per_sample.empty()) return r;
  double total = 0.0;
  for (double e : r.per_sample) total += e;
  r.mean_epe = total / double(r.per_sample.size());
  auto sorted = r.per_sample;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.median_epe = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return r;
}

EpeReport evaluate_epe(const Checkpoint& ckpt, const std::vector<SyntheticSample>& samples) {
  const auto net = instantiate(ckpt);
  return evaluate_epe(net, samples);
}

}  // namespace uraft
