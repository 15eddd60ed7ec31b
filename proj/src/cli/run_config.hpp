#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "uraft/compensation.hpp"
#include "uraft/flow_net.hpp"
#include "uraft/trainer.hpp"

namespace uraft::cli {

struct SynthSettings {
  std::string kind = "pair";  // pair | respiratory
  int n = 20;
  int size = 128;
  double max_disp = 5.0;
  double min_disp = 2.5;
  double sigma_min = 20.0;
  double sigma_max = 40.0;
  // respiratory clip
  double amplitude = 3.0;
  double frequency = 0.3;
  double fps = 20.0;
  double duration = 30.0;
  double sigma = 40.0;
  double phase = 0.0;
  double speckle_density = 0.6;
  double psf_sigma_axial = 1.0;
  double psf_sigma_lateral = 2.0;
};

struct CompensationSettings {
  Band band;
  double reduction_threshold = 0.05;  // px; below it the reduction is null
  double peak_ratio = 3.0;
};

/// Everything a command can be configured with. Loaded from --config JSON
/// (unknown keys rejected) and then overridden by explicit flags.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;  // its `model` member is ignored in favour of `model`
  SynthSettings synth;
  CompensationSettings compensation;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);

/// Writes effective_config.json into `dir` (created if needed).
void echo_config(const nlohmann::json& effective, const std::filesystem::path& dir);

}  // namespace uraft::cli
