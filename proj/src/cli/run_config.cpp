#include "run_config.hpp"

#include <fstream>
#include <set>

#include "uraft/error.hpp"
#include "uraft/io.hpp"

namespace uraft::cli {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                    const std::string& where) {
  if (!j.is_object()) throw ArgumentError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ArgumentError("unknown key in " + where + ": " + key);
  }
}

}  // namespace

void to_json(nlohmann::json& j, const RunConfig& c) {
  nlohmann::json train = c.train;
  train.erase("model");
  train.erase("seed");
  const auto& s = c.synth;
  j = nlohmann::json{
      {"seed", c.seed},
      {"model", c.model},
      {"train", train},
      {"synth",
       {{"kind", s.kind}, {"n", s.n}, {"size", s.size}, {"max_disp", s.max_disp},
        {"min_disp", s.min_disp}, {"sigma_min", s.sigma_min}, {"sigma_max", s.sigma_max},
        {"amplitude", s.amplitude}, {"frequency", s.frequency}, {"fps", s.fps},
        {"duration", s.duration}, {"sigma", s.sigma}, {"phase", s.phase},
        {"speckle_density", s.speckle_density}, {"psf_sigma_axial", s.psf_sigma_axial},
        {"psf_sigma_lateral", s.psf_sigma_lateral}}},
      {"compensation",
       {{"band", {c.compensation.band.low, c.compensation.band.high}},
        {"reduction_threshold", c.compensation.reduction_threshold},
        {"peak_ratio", c.compensation.peak_ratio}}}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  reject_unknown(j, {"seed", "model", "train", "synth", "compensation"}, "config");
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("train")) {
      auto train = j.at("train");
      if (train.contains("model") || train.contains("seed")) {
        throw ArgumentError("\"model\" and \"seed\" belong at the top level of the config");
      }
      c.train = train.get<TrainConfig>();
    }
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      reject_unknown(s, {"kind", "n", "size", "max_disp", "min_disp", "sigma_min", "sigma_max",
                         "amplitude", "frequency", "fps", "duration", "sigma", "phase",
                         "speckle_density", "psf_sigma_axial", "psf_sigma_lateral"},
                     "synth");
      auto& o = c.synth;
      o.kind = s.value("kind", o.kind);
      o.n = s.value("n", o.n);
      o.size = s.value("size", o.size);
      o.max_disp = s.value("max_disp", o.max_disp);
      o.min_disp = s.value("min_disp", o.min_disp);
      o.sigma_min = s.value("sigma_min", o.sigma_min);
      o.sigma_max = s.value("sigma_max", o.sigma_max);
      o.amplitude = s.value("amplitude", o.amplitude);
      o.frequency = s.value("frequency", o.frequency);
      o.fps = s.value("fps", o.fps);
      o.duration = s.value("duration", o.duration);
      o.sigma = s.value("sigma", o.sigma);
      o.phase = s.value("phase", o.phase);
      o.speckle_density = s.value("speckle_density", o.speckle_density);
      o.psf_sigma_axial = s.value("psf_sigma_axial", o.psf_sigma_axial);
      o.psf_sigma_lateral = s.value("psf_sigma_lateral", o.psf_sigma_lateral);
    }
    if (j.contains("compensation")) {
      const auto& s = j.at("compensation");
      reject_unknown(s, {"band", "reduction_threshold", "peak_ratio"}, "compensation");
      if (s.contains("band")) {
        const auto band = s.at("band").get<std::vector<double>>();
        if (band.size() != 2) throw ArgumentError("compensation.band needs [low, high]");
        c.compensation.band = {band[0], band[1]};
      }
      c.compensation.reduction_threshold =
          s.value("reduction_threshold", c.compensation.reduction_threshold);
      c.compensation.peak_ratio = s.value("peak_ratio", c.compensation.peak_ratio);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return j.get<RunConfig>();
}

void echo_config(const nlohmann::json& effective, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_atomically(dir / "effective_config.json",
                   [&](std::ostream& out) { out << effective.dump(2) << '\n'; });
}

}  // namespace uraft::cli
