#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "uraft/checkpoint.hpp"
#include "uraft/flow_net.hpp"
#include "uraft/image.hpp"
#include "uraft/losses.hpp"
#include "uraft/synthetic.hpp"

namespace uraft {

struct TrainConfig {
  double learning_rate = 2e-4;
  double min_learning_rate = 1e-5;
  std::int64_t warmup_steps = 0;
  std::int64_t steps = 5000;
  int batch_size = 4;
  LossWeights loss;  // lambda_s, gamma, iterate weighting, MS-SSIM
  std::uint64_t seed = 0;
  int image_size = 128;  // 0 accepts any size the model supports
  std::int64_t checkpoint_interval = 1000;
  double gradient_clip_norm = 1.0;
  // Random joint flips/transposes of each pair.
  bool augment = true;
  ModelConfig model;

  std::optional<std::filesystem::path> log_path;        // JSON lines
  std::optional<std::filesystem::path> checkpoint_dir;  // step_NNNNNN.urck + final.urck

  /// Throws ArgumentError on a non-positive field.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Rejects unknown keys; paths are not part of the JSON form.
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainingPair {
  Image fixed;
  Image moving;
};

enum class PairStrategy { first_frame_anchor, random_offset };

/// first_frame_anchor: (frame_0, frame_i) for i >= 1. random_offset: one pair
/// per frame i with a partner j != i drawn uniformly from |i - j| <= max_offset.
std::vector<TrainingPair> make_pairs(const VideoSequence& seq, PairStrategy strategy,
                                     int max_offset = 5, std::uint64_t seed = 0);
std::vector<TrainingPair> make_pairs(const std::vector<SyntheticSample>& samples);

/// Per-step hook; returning false stops training early.
using StepHook = std::function<bool(const StepRecord&)>;

/// Minimizes the (iterate-weighted) cyclic loss with Adam, cosine decay and
/// gradient clipping, starting from a fresh network seeded by config.seed.
/// Throws DivergenceError naming the step when the loss becomes non-finite.
Checkpoint train(const TrainConfig& config, const std::vector<TrainingPair>& data,
                 const StepHook& hook = {});
/// Continues from an existing network in place.
TrainState train(FlowNet<float>& net, const TrainConfig& config,
                 const std::vector<TrainingPair>& data, const StepHook& hook = {});

struct EpeReport {
  double mean_epe = 0.0;
  double median_epe = 0.0;
  std::vector<double> per_sample;
};

void to_json(nlohmann::json& j, const EpeReport& r);

/// Mean over pixels of |u_pred - u_gt| per sample, then aggregated.
EpeReport evaluate_epe(const FlowPredictor& model, const std::vector<SyntheticSample>& samples);
EpeReport evaluate_epe(const Checkpoint& ckpt, const std::vector<SyntheticSample>& samples);

}  // namespace uraft
