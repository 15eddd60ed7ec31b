#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "uraft/checkpoint.hpp"
#include "uraft/compensation.hpp"
#include "uraft/error.hpp"
#include "uraft/io.hpp"
#include "uraft/plot.hpp"
#include "uraft/synthetic.hpp"
#include "uraft/trainer.hpp"
#include "uraft/warp.hpp"

namespace uraft::cli {

namespace fs = std::filesystem;

namespace {

nlohmann::json effective(const Context& ctx, const std::string& command, nlohmann::json extra) {
  nlohmann::json j{{"command", command}, {"seed", ctx.config.seed}, {"config", ctx.config}};
  if (!extra.is_null()) j["arguments"] = std::move(extra);
  return j;
}

// Echo into the output directory and onto the diagnostic stream.
void announce(const Context& ctx, const nlohmann::json& eff) {
  ctx.err << "effective config: " << eff.dump() << '\n';
  if (ctx.out_dir) echo_config(eff, *ctx.out_dir);
}

const fs::path& require_out(const Context& ctx, const char* command) {
  if (!ctx.out_dir) throw ArgumentError(std::string(command) + " needs --out");
  return *ctx.out_dir;
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  write_atomically(path, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
}

std::string frame_name(const char* prefix, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%05zu%s", prefix, i, ext);
  return buf;
}

FlowNet<float> load_model(const fs::path& path) {
  if (!fs::exists(path)) throw ArgumentError("checkpoint not found: " + path.string());
  return instantiate(load_checkpoint(path));
}

bool is_pair_corpus(const fs::path& dir) {
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "fixed.png")) return true;
  }
  return false;
}

}  // namespace

PixelLocation parse_pixel(const std::string& text) {
  std::istringstream ss(text);
  PixelLocation p;
  char comma = 0;
  if (!(ss >> p.x >> comma >> p.y) || comma != ',' || !ss.eof()) {
    throw ArgumentError("pixel must look like x,y; got \"" + text + "\"");
  }
  return p;
}

int cmd_synth(Context& ctx) {
  const auto& s = ctx.config.synth;
  const auto& dir = require_out(ctx, "synth");
  PhantomSpec phantom;
  phantom.size = s.size;
  phantom.speckle_density = s.speckle_density;
  phantom.psf_sigma_axial = s.psf_sigma_axial;
  phantom.psf_sigma_lateral = s.psf_sigma_lateral;
  phantom.seed = ctx.config.seed;
  phantom.validate();

  const auto eff = effective(ctx, "synth", nullptr);
  if (s.kind == "pair") {
    PairCorpusSpec spec;
    spec.count = s.n;
    spec.size = s.size;
    spec.max_displacement = s.max_disp;
    spec.min_displacement = std::min(s.min_disp, s.max_disp);
    spec.min_sigma = s.sigma_min;
    spec.max_sigma = s.sigma_max;
    spec.seed = ctx.config.seed;
    if (s.max_disp > 0.15 * s.size) throw ArgumentError("--max-disp exceeds 0.15 x size");
    if (s.sigma_min < 4.0) throw ArgumentError("--sigma-min must be >= 4");
    announce(ctx, eff);
    const auto samples = make_pair_corpus(spec);
    nlohmann::json manifest{{"kind", "pair"}, {"seed", ctx.config.seed}, {"count", samples.size()},
                            {"specs", {{"corpus", spec}, {"phantom", phantom}}}};
    write_pair_corpus(samples, manifest, dir);
    ctx.out << nlohmann::json{{"kind", "pair"}, {"count", samples.size()}, {"out", dir.string()}}.dump()
            << '\n';
    return kOk;
  }
  if (s.kind == "respiratory") {
    DeformationSpec motion;
    motion.kind = DeformationKind::respiratory;
    motion.center_x = motion.center_y = s.size / 2.0;
    motion.sigma = s.sigma;
    motion.peak_x = 0.0;
    motion.peak_y = 1.0;
    motion.amplitude = s.amplitude;
    motion.frequency = s.frequency;
    motion.phase = s.phase;
    motion.validate(s.size, s.size);
    announce(ctx, eff);
    const auto seq = make_respiratory_sequence(phantom, motion, s.fps, s.duration);
    nlohmann::json manifest{{"kind", "respiratory"},
                            {"seed", ctx.config.seed},
                            {"fps", s.fps},
                            {"frames", seq.sequence.size()},
                            {"specs", {{"phantom", phantom}, {"motion", motion}}}};
    write_sequence(seq, manifest, dir);
    ctx.out << nlohmann::json{{"kind", "respiratory"}, {"frames", seq.sequence.size()},
                              {"fps", s.fps}, {"out", dir.string()}}.dump()
            << '\n';
    return kOk;
  }
  throw ArgumentError("--kind must be pair or respiratory");
}

int cmd_train(Context& ctx, const TrainArgs& args) {
  const auto& dir = require_out(ctx, "train");
  if (args.data.empty()) throw ArgumentError("train needs --data");
  std::vector<TrainingPair> pairs;
  for (const auto& d : args.data) {
    if (!fs::is_directory(d)) throw ArgumentError("data directory does not exist: " + d.string());
    if (is_pair_corpus(d)) {
      auto more = make_pairs(read_pair_corpus(d));
      pairs.insert(pairs.end(), more.begin(), more.end());
    } else {
      const fs::path frames = fs::is_directory(d / "frames") ? d / "frames" : d;
      const auto seq = load_sequence(frames, ctx.config.synth.fps);
      auto more = make_pairs(seq, PairStrategy::random_offset, 5, ctx.config.seed);
      pairs.insert(pairs.end(), more.begin(), more.end());
    }
  }
  if (pairs.empty()) throw ArgumentError("no training pairs found");

  TrainConfig tc = ctx.config.train;
  tc.model = ctx.config.model;
  tc.seed = ctx.config.seed;
  if (tc.image_size > 0 && pairs[0].fixed.height() != tc.image_size) {
    tc.image_size = pairs[0].fixed.height();
  }
  tc.log_path = dir / "train_log.jsonl";
  tc.checkpoint_dir = dir / "checkpoints";
  nlohmann::json data_list = nlohmann::json::array();
  for (const auto& d : args.data) data_list.push_back(d.string());
  auto eff = effective(ctx, "train", {{"data", data_list}, {"pairs", pairs.size()}});
  eff["config"]["train"]["image_size"] = tc.image_size;
  announce(ctx, eff);

  std::int64_t last_report = 0;
  auto ckpt = train(tc, pairs, [&](const StepRecord& r) {
    if (r.step - last_report >= 50 || r.step == tc.steps) {
      ctx.err << "step " << r.step << " total " << r.loss.total << " lr " << r.lr << '\n';
      last_report = r.step;
    }
    return true;
  });
  save_checkpoint(ckpt, dir / "checkpoint.urck");
  ctx.out << nlohmann::json{{"checkpoint", (dir / "checkpoint.urck").string()},
                            {"steps", ckpt.state.steps},
                            {"final_total", ckpt.state.history.empty()
                                                ? nlohmann::json(nullptr)
                                                : nlohmann::json(ckpt.state.history.back().loss.total)}}
                 .dump()
          << '\n';
  return kOk;
}

int cmd_register(Context& ctx, const RegisterArgs& args) {
  const auto net = load_model(args.ckpt);
  const Image fixed = read_png_levels(args.fixed);
  const Image moving = read_png_levels(args.moving);
  if (fixed.height() != moving.height() || fixed.width() != moving.width()) {
    throw DimensionMismatch("fixed and moving images differ in size");
  }
  nlohmann::json arguments{{"fixed", args.fixed.string()},
                           {"moving", args.moving.string()},
                           {"ckpt", args.ckpt.string()}};
  if (args.gt) arguments["gt"] = args.gt->string();
  announce(ctx, effective(ctx, "register", arguments));

  const auto field = net.predict(fixed, moving);
  nlohmann::json result{{"mean_disp", field.mean_magnitude()}, {"max_disp", field.max_magnitude()}};
  if (args.gt) {
    SyntheticSample sample{fixed, moving, read_flow(*args.gt)};
    result["epe"] = evaluate_epe(net, {sample}).mean_epe;
  }
  if (ctx.out_dir) {
    write_flow(field, *ctx.out_dir / "field.udf1");
    if (args.write_warped) write_png(warp(moving, field).image, *ctx.out_dir / "warped.png");
    write_json_file(*ctx.out_dir / "register.json", result);
  }
  ctx.out << result.dump() << '\n';
  return kOk;
}

int cmd_compensate(Context& ctx, const CompensateArgs& args) {
  const auto& dir = require_out(ctx, "compensate");
  const auto net = load_model(args.ckpt);
  const fs::path frames_dir = fs::is_directory(args.frames / "frames") ? args.frames / "frames" : args.frames;
  const auto seq = load_sequence(frames_dir, args.fps);
  for (const auto& p : args.pixels) {
    if (p.x < 0 || p.y < 0 || p.x >= seq.width() || p.y >= seq.height()) {
      throw ArgumentError("--pixel lies outside the frames");
    }
  }
  nlohmann::json pixels = nlohmann::json::array();
  for (const auto& p : args.pixels) pixels.push_back({p.x, p.y});
  announce(ctx, effective(ctx, "compensate",
                          {{"frames", args.frames.string()}, {"fps", args.fps},
                           {"ckpt", args.ckpt.string()}, {"pixels", pixels}}));

  auto stab = stabilize_sequence(net, seq);
  const auto after = track_sequence(net, stab.compensated);
  const auto report = compensation_report(stab.before, after, net.id(),
                                          ctx.config.compensation.reduction_threshold);

  fs::create_directories(dir / "compensated");
  fs::create_directories(dir / "fields");
  for (std::size_t i = 0; i < stab.compensated.size(); ++i) {
    write_png(stab.compensated[i], dir / "compensated" / frame_name("frame_", i, ".png"));
  }
  for (std::size_t i = 0; i < stab.before.fields().size(); ++i) {
    write_flow(stab.before.fields()[i], dir / "fields" / frame_name("field_", i + 1, ".udf1"));
  }
  nlohmann::json rj = report;
  rj["frames"] = seq.size();
  rj["reduction_threshold"] = ctx.config.compensation.reduction_threshold;
  write_json_file(dir / "report.json", rj);
  write_track_csv(stab.before, args.pixels, dir / "track.csv");
  write_track_csv(after, args.pixels, dir / "track_after.csv");

  if (!args.pixels.empty()) {
    const auto p = args.pixels.front();
    std::vector<double> frames(stab.before.frame_count());
    for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = double(i + 1);
    write_line_plot({{frames, stab.before.trace(p), {200, 40, 40}},
                     {frames, after.trace(p), {30, 90, 200}}},
                    dir / "displacement_plot.png");
  }
  nlohmann::json summary{{"avg_before", report.avg_before},
                         {"avg_after", report.avg_after},
                         {"reduction_percent", rj["reduction_percent"]},
                         {"report", (dir / "report.json").string()}};
  ctx.out << summary.dump() << '\n';
  return kOk;
}

int cmd_analyze(Context& ctx, const AnalyzeArgs& args) {
  std::vector<double> trace;
  double fps = 0.0;
  nlohmann::json arguments = nlohmann::json::object();
  if (args.track) {
    const auto csv = read_track_csv(*args.track);
    if (csv.traces.empty()) throw InsufficientData("track file has no rows");
    trace.assign(csv.traces[0].size(), 0.0);
    for (const auto& t : csv.traces) {
      if (t.size() != trace.size()) throw FormatError("track pixels have different lengths");
      for (std::size_t i = 0; i < t.size(); ++i) trace[i] += t[i] / double(csv.traces.size());
    }
    if (args.fps) {
      fps = *args.fps;
    } else if (csv.times.size() >= 2 && csv.times[1] > csv.times[0]) {
      fps = 1.0 / (csv.times[1] - csv.times[0]);
    } else {
      throw ArgumentError("cannot infer fps from the track; pass --fps");
    }
    arguments["track"] = args.track->string();
  } else if (args.frames && args.ckpt) {
    if (!args.fps) throw ArgumentError("--frames needs --fps");
    fps = *args.fps;
    const auto net = load_model(*args.ckpt);
    const fs::path frames_dir = fs::is_directory(*args.frames / "frames") ? *args.frames / "frames" : *args.frames;
    const auto seq = load_sequence(frames_dir, fps);
    const auto track = track_sequence(net, seq);
    trace = args.pixel ? track.trace(*args.pixel) : track.per_frame_mean();
    arguments["frames"] = args.frames->string();
    arguments["ckpt"] = args.ckpt->string();
  } else {
    throw ArgumentError("analyze needs --track, or --frames with --ckpt");
  }
  arguments["fps"] = fps;
  if (args.pixel) arguments["pixel"] = {args.pixel->x, args.pixel->y};
  announce(ctx, effective(ctx, "analyze", arguments));

  const auto& comp = ctx.config.compensation;
  nlohmann::json result;
  try {
    const auto est = estimate_rate(trace, fps, comp.band, comp.peak_ratio);
    nlohmann::json full = est;
    result = full;
    result.erase("spectrum");
    result["no_dominant_peak"] = false;
    if (ctx.out_dir) {
      write_json_file(*ctx.out_dir / "spectrum.json", full);
      std::vector<double> f, p;
      for (const auto& [hz, power] : est.spectrum) {
        f.push_back(hz);
        p.push_back(power);
      }
      write_line_plot({{f, p, {30, 90, 200}}}, *ctx.out_dir / "spectrum.png");
    }
  } catch (const NoDominantPeak& e) {
    result = {{"rate_bpm", nullptr},
              {"dominant_frequency_hz", nullptr},
              {"no_dominant_peak", true},
              {"reason", e.what()},
              {"band_hz", {comp.band.low, comp.band.high}}};
    if (ctx.out_dir) write_json_file(*ctx.out_dir / "spectrum.json", result);
  }
  ctx.out << result.dump() << '\n';
  return kOk;
}

}  // namespace uraft::cli
