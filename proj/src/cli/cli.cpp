#include "uraft/cli.hpp"

#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "commands.hpp"
#include "uraft/error.hpp"

namespace uraft::cli {

namespace {

// Flags that override RunConfig fields only when given on the command line.
struct Overrides {
  std::optional<std::string> kind;
  std::optional<int> n, size;
  std::optional<double> max_disp, min_disp, sigma_min, sigma_max;
  std::optional<double> amplitude, frequency, synth_fps, duration, sigma, phase;
  std::optional<std::int64_t> steps, checkpoint_interval;
  std::optional<int> batch_size, iterations;
  std::optional<double> lr, lambda_s, gamma;
  std::optional<std::string> band;
  std::optional<double> reduction_threshold;

  void apply(RunConfig& c) const {
    auto set = [](auto& dst, const auto& src) {
      if (src) dst = *src;
    };
    set(c.synth.kind, kind);
    set(c.synth.n, n);
    set(c.synth.size, size);
    set(c.synth.max_disp, max_disp);
    set(c.synth.min_disp, min_disp);
    set(c.synth.sigma_min, sigma_min);
    set(c.synth.sigma_max, sigma_max);
    set(c.synth.amplitude, amplitude);
    set(c.synth.frequency, frequency);
    set(c.synth.fps, synth_fps);
    set(c.synth.duration, duration);
    set(c.synth.sigma, sigma);
    set(c.synth.phase, phase);
    set(c.train.steps, steps);
    set(c.train.checkpoint_interval, checkpoint_interval);
    set(c.train.batch_size, batch_size);
    set(c.train.learning_rate, lr);
    set(c.train.loss.smoothness, lambda_s);
    set(c.train.loss.gamma, gamma);
    set(c.model.iterations, iterations);
    set(c.compensation.reduction_threshold, reduction_threshold);
    if (band) {
      const auto comma = band->find(',');
      if (comma == std::string::npos) throw ArgumentError("--band must look like low,high");
      try {
        c.compensation.band = {std::stod(band->substr(0, comma)), std::stod(band->substr(comma + 1))};
      } catch (const std::logic_error&) {
        throw ArgumentError("--band must look like low,high");
      }
    }
    c.model.validate();
    c.train.validate();
  }
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unsupervised ultrasound registration, tracking and motion compensation", "uraft"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_path, out_dir;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON run configuration (unknown keys rejected)");
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--out", out_dir, "Output directory");

  Overrides ov;
  auto* synth = app.add_subcommand("synth", "Write synthetic speckle pairs or a respiratory clip");
  synth->add_option("--kind", ov.kind, "pair | respiratory");
  synth->add_option("--n", ov.n, "Number of pairs");
  synth->add_option("--size", ov.size, "Image side in pixels (>= 32)");
  synth->add_option("--max-disp", ov.max_disp, "Largest bump peak displacement, px");
  synth->add_option("--min-disp", ov.min_disp, "Smallest bump peak displacement, px");
  synth->add_option("--sigma-min", ov.sigma_min, "Smallest bump width, px");
  synth->add_option("--sigma-max", ov.sigma_max, "Largest bump width, px");
  synth->add_option("--amplitude", ov.amplitude, "Respiratory amplitude A, px");
  synth->add_option("--frequency", ov.frequency, "Respiratory frequency, Hz");
  synth->add_option("--fps", ov.synth_fps, "Clip frame rate");
  synth->add_option("--duration", ov.duration, "Clip length, s");
  synth->add_option("--sigma", ov.sigma, "Respiratory base field width, px");
  synth->add_option("--phase", ov.phase, "Respiratory phase, rad");

  TrainArgs train_args;
  std::vector<std::string> data_dirs;
  auto* train = app.add_subcommand("train", "Train a network on pair corpora or frame sequences");
  train->add_option("--data", data_dirs, "Pair corpus or frame directory (repeatable)");
  train->add_option("--steps", ov.steps, "Optimization steps");
  train->add_option("--batch-size", ov.batch_size, "Pairs per step");
  train->add_option("--lr", ov.lr, "Peak learning rate");
  train->add_option("--lambda-s", ov.lambda_s, "Smoothness weight");
  train->add_option("--gamma", ov.gamma, "Iterate weight decay");
  train->add_option("--iterations", ov.iterations, "Refinement iterations");
  train->add_option("--checkpoint-interval", ov.checkpoint_interval, "Steps between checkpoints");

  RegisterArgs reg;
  std::optional<std::string> gt;
  auto* registration = app.add_subcommand("register", "Register a moving image to a fixed image");
  registration->add_option("--fixed", reg.fixed, "Fixed image PNG")->required();
  registration->add_option("--moving", reg.moving, "Moving image PNG")->required();
  registration->add_option("--ckpt", reg.ckpt, "Checkpoint")->required();
  registration->add_option("--gt", gt, "Ground-truth UDF1 field for EPE");
  registration->add_flag("--warped", reg.write_warped, "Also write the warped moving image");

  CompensateArgs comp;
  std::vector<std::string> comp_pixels;
  auto* compensate = app.add_subcommand("compensate", "Track and cancel motion in a frame sequence");
  compensate->add_option("--frames", comp.frames, "Directory of PNG frames")->required();
  compensate->add_option("--fps", comp.fps, "Frame rate")->required();
  compensate->add_option("--ckpt", comp.ckpt, "Checkpoint")->required();
  compensate->add_option("--pixel", comp_pixels, "Tracked pixel x,y (repeatable)");
  compensate->add_option("--reduction-threshold", ov.reduction_threshold,
                         "Report a null reduction below this average displacement, px");

  AnalyzeArgs an;
  std::optional<std::string> an_track, an_frames, an_ckpt, an_pixel;
  auto* analyze = app.add_subcommand("analyze", "Estimate the dominant motion frequency");
  analyze->add_option("--track", an_track, "Track CSV");
  analyze->add_option("--frames", an_frames, "Directory of PNG frames");
  analyze->add_option("--ckpt", an_ckpt, "Checkpoint (with --frames)");
  analyze->add_option("--fps", an.fps, "Frame rate");
  analyze->add_option("--band", ov.band, "Search band low,high in Hz");
  analyze->add_option("--pixel", an_pixel, "Pixel x,y (default: whole-frame mean)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    RunConfig config = config_path ? load_run_config(*config_path) : RunConfig{};
    if (seed) config.seed = *seed;
    ov.apply(config);
    Context ctx{config, out_dir ? std::optional<std::filesystem::path>(*out_dir) : std::nullopt,
                out, err};

    if (synth->parsed()) return cmd_synth(ctx);
    if (train->parsed()) {
      for (const auto& d : data_dirs) train_args.data.emplace_back(d);
      return cmd_train(ctx, train_args);
    }
    if (registration->parsed()) {
      if (gt) reg.gt = *gt;
      return cmd_register(ctx, reg);
    }
    if (compensate->parsed()) {
      for (const auto& p : comp_pixels) comp.pixels.push_back(parse_pixel(p));
      return cmd_compensate(ctx, comp);
    }
    if (analyze->parsed()) {
      if (an_track) an.track = *an_track;
      if (an_frames) an.frames = *an_frames;
      if (an_ckpt) an.ckpt = *an_ckpt;
      if (an_pixel) an.pixel = parse_pixel(*an_pixel);
      return cmd_analyze(ctx, an);
    }
    err << "no command given\n";
    return kUsage;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  } catch (const NoDominantPeak& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  } catch (const Error& e) {
    // Every other library error describes bad arguments or input data.
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
}

}  // namespace uraft::cli
