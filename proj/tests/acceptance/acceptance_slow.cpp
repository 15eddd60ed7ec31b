// Slow acceptance suite: criteria that need a model trained with the default
// configuration. The trained checkpoint is cached at the path given as the
// first argument (or URAFT_ACCEPTANCE_CHECKPOINT) and reused when present.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "report.hpp"
#include "uraft/checkpoint.hpp"
#include "uraft/compensation.hpp"
#include "uraft/synthetic.hpp"
#include "uraft/trainer.hpp"

using namespace uraft;
using namespace uraft::acceptance;
namespace fs = std::filesystem;

namespace {

std::vector<SyntheticSample> corpus(int count, std::uint64_t seed) {
  PairCorpusSpec spec;
  spec.count = count;
  spec.seed = seed;
  return make_pair_corpus(spec);
}

Checkpoint trained_model(const fs::path& cache, Report& r) {
  if (fs::exists(cache)) {
    r.info("reusing checkpoint " + cache.string());
    return load_checkpoint(cache);
  }
  TrainConfig cfg;  // defaults throughout
  cfg.checkpoint_dir = cache.parent_path() / "run";
  cfg.log_path = cache.parent_path() / "run" / "train_log.jsonl";
  Stopwatch clock;
  r.info(fmt("training %ld steps with the default configuration", long(cfg.steps)));
  auto ckpt = train(cfg, make_pairs(corpus(200, 1000)), [&](const StepRecord& s) {
    if (s.step % 250 == 0)
      r.info(fmt("step %ld total %.4f grad %.3f (%.0f s)", long(s.step), s.loss.total,
                 s.grad_norm, s.wall_time_s));
    return true;
  });
  r.info(fmt("training took %.0f s", clock.seconds()));
  fs::create_directories(cache.parent_path());
  save_checkpoint(ckpt, cache);
  return ckpt;
}

void synthetic_epe(const Checkpoint& ckpt, const std::vector<SyntheticSample>& test, Report& r) {
  constexpr double kEpe = 1.0;
  constexpr double kImprovement = 3.0;
  FlowNet<float> untrained(ckpt.config, ckpt.seed);
  const double before = evaluate_epe(untrained, test).mean_epe;
  const double after = evaluate_epe(ckpt, test).mean_epe;
  double zero = 0.0;
  for (const auto& s : test) zero += s.field_gt.mean_magnitude();
  zero /= double(test.size());
  r.line("6", "Synthetic EPE", after <= kEpe && before / after >= kImprovement,
         fmt("held-out EPE %.3f px (limit %.1f), untrained %.3f px, ratio %.2f (limit %.1f)",
             after, kEpe, before, before / after, kImprovement));
  r.info(fmt("zero-flow EPE on the same pairs %.3f px", zero));
}

void identical_frames(const FlowNet<float>& net, const std::vector<SyntheticSample>& test,
                      Report& r) {
  constexpr double kLimit = 0.5;
  double worst = 0.0;
  for (const auto& s : test) worst = std::max(worst, net.predict(s.fixed, s.fixed).mean_magnitude());
  r.line("6b", "Identical frames", worst <= kLimit,
         fmt("max mean |u| %.3f px over %zu pairs (limit %.1f)", worst, test.size(), kLimit));
}

void compensation(const FlowNet<float>& net, Report& r) {
  constexpr double kReduction = 70.0;
  constexpr double kOracle = 100.0;
  constexpr double kFps = 20.0;
  constexpr double kSeconds = 30.0;
  PhantomSpec phantom;
  phantom.size = 128;
  phantom.seed = 3;
  DeformationSpec motion;
  motion.kind = DeformationKind::respiratory;
  motion.center_x = 64.0;
  motion.center_y = 64.0;
  motion.sigma = 40.0;
  motion.amplitude = 3.0;
  motion.frequency = 0.3;
  auto clip = make_respiratory_sequence(phantom, motion, kFps, kSeconds);

  Stopwatch clock;
  auto st = stabilize_sequence(net, clip.sequence);
  auto report = compensation_report(net, clip.sequence, st.compensated);
  const double reduction = report.reduction_percent.value_or(0.0);

  // Oracle: compensate with the true registration fields and measure the
  // residual against the truth.
  std::span<const DisplacementField> truth(clip.registration.begin() + 1, clip.registration.end());
  auto oracle_st = stabilize_sequence(clip.sequence, truth);
  DisplacementTrack residual(128, 128, kFps);
  for (const auto& f : truth) residual.push(DisplacementField(f.height(), f.width()), false);
  auto oracle = compensation_report(oracle_st.before, residual, "oracle");
  const double oracle_reduction = oracle.reduction_percent.value_or(0.0);

  r.line("7", "Motion compensation",
         reduction >= kReduction && oracle_reduction == kOracle,
         fmt("retracked reduction %.1f%% (before %.3f px, after %.3f px; limit %.0f%%), oracle "
             "%.1f%% (required %.0f%%); %.0f s",
             reduction, report.avg_before, report.avg_after, kReduction, oracle_reduction, kOracle,
             clock.seconds()));
}

}  // namespace

int main(int argc, char** argv) {
  fs::path cache = "acceptance_model/model.urck";
  if (const char* env = std::getenv("URAFT_ACCEPTANCE_CHECKPOINT")) cache = env;
  if (argc > 1) cache = argv[1];

  Report report;
  const auto ckpt = trained_model(cache, report);
  const auto test = corpus(20, 2000);
  const auto net = instantiate(ckpt);
  synthetic_epe(ckpt, test, report);
  identical_frames(net, test, report);
  compensation(net, report);
  std::printf("%d failed\n", report.failures());
  return report.failures() == 0 ? 0 : 1;
}
