#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "uraft/flow_net.hpp"
#include "uraft/losses.hpp"

namespace uraft {

/// One optimization step's record, also the JSON-lines log schema.
struct StepRecord {
  std::int64_t step = 0;
  LossBreakdown loss;  // batch mean, final iterate
  double objective = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  double wall_time_s = 0.0;
};

void to_json(nlohmann::json& j, const StepRecord& r);
void from_json(const nlohmann::json& j, StepRecord& r);

struct TrainState {
  std::int64_t steps = 0;
  std::vector<StepRecord> history;
};

/// Network parameters with everything needed to rebuild the network.
struct Checkpoint {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::string model_id = "flow_net";
  std::vector<std::string> names;
  std::vector<Tensor<float>> tensors;
  TrainState state;
  nlohmann::json metadata = nlohmann::json::object();
};

Checkpoint snapshot(const FlowNet<float>& net, TrainState state = {});
/// Rebuilds the network; throws FormatError if the tensors do not fit the config.
FlowNet<float> instantiate(const Checkpoint& ckpt);

// Container: "URCK", u32 version, u64 header length, JSON header (config,
// seed, id, train state, tensor directory), then float32 LE tensor data.
// The ModelConfig is mirrored to "<path>.json". Both writes are atomic.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws FormatError on a malformed file and ArgumentError if it is missing.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace uraft
