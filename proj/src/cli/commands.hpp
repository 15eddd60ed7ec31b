#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"
#include "uraft/cli.hpp"

namespace uraft::cli {

struct Context {
  RunConfig config;
  std::optional<std::filesystem::path> out_dir;
  std::ostream& out;
  std::ostream& err;
};

struct RegisterArgs {
  std::filesystem::path fixed, moving, ckpt;
  std::optional<std::filesystem::path> gt;
  bool write_warped = false;
};

struct CompensateArgs {
  std::filesystem::path frames, ckpt;
  double fps = 20.0;
  std::vector<PixelLocation> pixels;
};

struct AnalyzeArgs {
  std::optional<std::filesystem::path> track, frames, ckpt;
  std::optional<double> fps;
  std::optional<PixelLocation> pixel;
};

struct TrainArgs {
  std::vector<std::filesystem::path> data;
};

int cmd_synth(Context& ctx);
int cmd_train(Context& ctx, const TrainArgs& args);
int cmd_register(Context& ctx, const RegisterArgs& args);
int cmd_compensate(Context& ctx, const CompensateArgs& args);
int cmd_analyze(Context& ctx, const AnalyzeArgs& args);

/// Parses "x,y" into a pixel location; throws ArgumentError.
PixelLocation parse_pixel(const std::string& text);

}  // namespace uraft::cli
