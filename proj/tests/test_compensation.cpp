#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "test_support.hpp"
#include "uraft/compensation.hpp"
#include "uraft/error.hpp"
#include "uraft/synthetic.hpp"
#include "uraft/warp.hpp"

using namespace uraft;
using uraft::testing::random_image;

namespace {

class ConstantFlow final : public FlowPredictor {
 public:
  ConstantFlow(float ux, float uy) : ux_(ux), uy_(uy) {}
  DisplacementField predict(const Image& f, const Image& m) const override {
    if (f.height() != m.height() || f.width() != m.width()) throw DimensionMismatch("stub");
    DisplacementField u(f.height(), f.width());
    for (int y = 0; y < f.height(); ++y)
      for (int x = 0; x < f.width(); ++x) u.set(x, y, ux_, uy_);
    return u;
  }
  std::string id() const override { return "constant"; }

 private:
  float ux_, uy_;
};

VideoSequence random_sequence(int n, int h, int w, double fps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Image> frames;
  for (int i = 0; i < n; ++i) frames.push_back(random_image(h, w, rng));
  return VideoSequence(std::move(frames), fps);
}

std::vector<double> sine_trace(double f, double fps, int n, double amp, double offset,
                               double phase = 0.0) {
  std::vector<double> t(n);
  for (int i = 0; i < n; ++i)
    t[i] = offset + amp * std::sin(2.0 * std::numbers::pi * f * i / fps + phase);
  return t;
}

}  // namespace

TEST_CASE("constant 3-4 flow tracks as 5 everywhere") {
  auto seq = random_sequence(4, 8, 8, 10.0, 1);
  auto track = track_sequence(ConstantFlow(3, 4), seq, true);
  CHECK(track.frame_count() == 3);
  for (std::size_t i = 1; i <= 3; ++i)
    for (float v : track.magnitudes(i)) CHECK(v == 5.0f);
  CHECK(track.d(0, {2, 2}) == 0.0);
  CHECK(track.mean() == doctest::Approx(5.0));
  CHECK(track.trace({1, 1}) == std::vector<double>{5.0, 5.0, 5.0});
  CHECK(track.region_trace(0, 0, 7, 7).size() == 3);
}

TEST_CASE("track magnitudes match the retained fields") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-4.0f, 4.0f);
  std::vector<DisplacementField> fields;
  for (int i = 0; i < 3; ++i) {
    DisplacementField f(6, 7);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 7; ++x) f.set(x, y, u(rng), u(rng));
    fields.push_back(f);
  }
  auto track = track_from_fields(fields, 5.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 7; ++x) {
        const double want = std::hypot(double(fields[i].ux(x, y)), double(fields[i].uy(x, y)));
        CHECK(std::abs(track.d(i + 1, {x, y}) - want) <= 1e-6);
      }
}

TEST_CASE("track rejects frames the model cannot take") {
  auto seq = random_sequence(3, 8, 8, 10.0, 3);
  FlowNet<float> net(ModelConfig{}, 1);
  CHECK_THROWS_AS(track_sequence(net, seq), DimensionError);
}

TEST_CASE("zero-flow compensation is the identity") {
  auto seq = random_sequence(5, 8, 8, 10.0, 4);
  ConstantFlow zero(0, 0);
  auto st = stabilize_sequence(zero, seq);
  REQUIRE(st.compensated.size() == seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) CHECK(st.compensated[i] == seq[i]);
  auto report = compensation_report(zero, seq, st.compensated);
  CHECK(report.avg_before == 0.0);
  CHECK_FALSE(report.reduction_percent.has_value());
}

TEST_CASE("reduction arithmetic") {
  CHECK(*reduction_percent(2.0, 2.0) == 0.0);
  CHECK(*reduction_percent(2.0, 0.0) == 100.0);
  CHECK(*reduction_percent(4.0, 1.0) == doctest::Approx(75.0));
  CHECK_FALSE(reduction_percent(0.0, 0.0).has_value());
  CHECK_FALSE(reduction_percent(0.04, 0.0, 0.05).has_value());
  const double before[] = {2.09, 2.32, 1.75};
  const double after[] = {0.32, 0.65, 0.49};
  // Independent: (1 - (0.32 + 0.65 + 0.49) / (2.09 + 2.32 + 1.75)) * 100.
  const double expected = (1.0 - 1.46 / 6.16) * 100.0;
  CHECK(pooled_reduction_percent(before, after) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(pooled_reduction_percent(before, after) - 76.3) <= 0.1);
}

TEST_CASE("report is self-consistent") {
  std::vector<DisplacementField> b, a;
  for (int i = 1; i <= 4; ++i) {
    DisplacementField fb(4, 4), fa(4, 4);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        fb.set(x, y, float(i), 0.0f);
        fa.set(x, y, 0.0f, 0.25f * i);
      }
    b.push_back(fb);
    a.push_back(fa);
  }
  auto r = compensation_report(track_from_fields(b, 10), track_from_fields(a, 10), "m");
  CHECK(r.avg_before == doctest::Approx(2.5));
  CHECK(r.avg_after == doctest::Approx(0.625));
  CHECK(std::abs(*r.reduction_percent - 100.0 * (1.0 - r.avg_after / r.avg_before)) <= 1e-9);
  CHECK(r.per_frame_before == std::vector<double>{1, 2, 3, 4});
  nlohmann::json j = r;
  CHECK(j["model_id"] == "m");
  CHECK(j["reduction_percent"].get<double>() == doctest::Approx(75.0));
}

TEST_CASE("oracle fields compensate a respiratory clip completely") {
  PhantomSpec p;
  p.size = 64;
  p.seed = 5;
  DeformationSpec m;
  m.kind = DeformationKind::respiratory;
  m.center_x = 32;
  m.center_y = 32;
  m.sigma = 16;
  m.amplitude = 3.0;
  auto clip = make_respiratory_sequence(p, m, 20.0, 4.0);
  std::span<const DisplacementField> truth(clip.registration.begin() + 1, clip.registration.end());
  auto st = stabilize_sequence(clip.sequence, truth);
  // Residual motion of each compensated frame, measured against the truth.
  std::vector<DisplacementField> residual;
  for (const auto& f : truth) {
    DisplacementField r(f.height(), f.width());
    for (int y = 0; y < f.height(); ++y)
      for (int x = 0; x < f.width(); ++x)
        r.set(x, y, f.ux(x, y) - st.before.fields()[&f - truth.data()].ux(x, y),
              f.uy(x, y) - st.before.fields()[&f - truth.data()].uy(x, y));
    residual.push_back(r);
  }
  auto after = track_from_fields(residual, 20.0);
  auto report = compensation_report(st.before, after, "oracle");
  CHECK(report.avg_before > 0.5);
  CHECK(report.avg_after == 0.0);
  CHECK(*report.reduction_percent == 100.0);

  // The warped frames land on frame 0 up to resampling blur.
  double err = 0.0;
  for (std::size_t i = 1; i < st.compensated.size(); ++i) {
    const auto& c = st.compensated[i];
    for (int y = 8; y < 56; ++y)
      for (int x = 8; x < 56; ++x) err += std::abs(c.at(x, y) - clip.sequence[0].at(x, y));
  }
  err /= double(st.compensated.size() - 1) * 48 * 48;
  double raw = 0.0;
  for (std::size_t i = 1; i < clip.sequence.size(); ++i)
    for (int y = 8; y < 56; ++y)
      for (int x = 8; x < 56; ++x) raw += std::abs(clip.sequence[i].at(x, y) - clip.sequence[0].at(x, y));
  raw /= double(clip.sequence.size() - 1) * 48 * 48;
  CHECK(err < 0.5 * raw);
}

TEST_CASE("rate of a 0.3 Hz trace") {
  auto t = sine_trace(0.3, 20.0, 1200, 1.0, 2.0);
  auto s = estimate_rate(t, 20.0);
  CHECK(s.frequency_resolution == doctest::Approx(20.0 / 1200));
  CHECK(std::abs(s.dominant_frequency - 0.3) <= s.frequency_resolution);
  CHECK(std::abs(s.rate_bpm - 18.0) <= 1.0);
  CHECK(s.rate_bpm == doctest::Approx(60.0 * s.dominant_frequency));
}

TEST_CASE("two tones: the larger peak wins") {
  auto a = sine_trace(0.3, 20.0, 1200, 2.0, 0.0);
  auto b = sine_trace(0.6, 20.0, 1200, 1.0, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  CHECK(std::abs(estimate_rate(a, 20.0).rate_bpm - 18.0) <= 1.0);
}

TEST_CASE("rate errors") {
  std::vector<double> flat(200, 1.5);
  CHECK_THROWS_AS(estimate_rate(flat, 20.0), NoDominantPeak);
  std::vector<double> short_trace(63, 0.0);
  CHECK_THROWS_AS(estimate_rate(short_trace, 20.0), InsufficientData);
  auto t = sine_trace(0.3, 2.0, 200, 1.0, 0.0);
  CHECK_THROWS_AS(estimate_rate(t, 2.0), ArgumentError);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> white(256);
  for (auto& v : white) v = noise(rng);
  CHECK_THROWS_AS(estimate_rate(white, 20.0, Band{}, 1e6), NoDominantPeak);
}

TEST_CASE("20 random-frequency traces land within one bin") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> freq(0.15, 0.6), phase(0.0, 6.28), amp(0.5, 3.0);
  std::normal_distribution<double> noise(0.0, 0.1);
  int hits = 0;
  for (int k = 0; k < 20; ++k) {
    const double f = freq(rng);
    auto t = sine_trace(f, 20.0, 1200, amp(rng), 2.0, phase(rng));
    for (auto& v : t) v = std::abs(v + noise(rng));
    auto s = estimate_rate(t, 20.0);
    hits += std::abs(s.dominant_frequency - f) <= s.frequency_resolution;
  }
  CHECK(hits == 20);
}

TEST_CASE("track CSV round trip") {
  std::vector<DisplacementField> fields;
  for (int i = 1; i <= 5; ++i) {
    DisplacementField f(4, 4);
    f.set(1, 2, 0.5f * i, 0.0f);
    fields.push_back(f);
  }
  auto track = track_from_fields(fields, 4.0);
  const auto path = std::filesystem::temp_directory_path() /
                    ("uraft_track_" + std::to_string(::getpid()) + ".csv");
  std::vector<PixelLocation> px{{1, 2}, {0, 0}};
  write_track_csv(track, px, path);
  auto csv = read_track_csv(path);
  REQUIRE(csv.pixels.size() == 2);
  CHECK(csv.pixels[0].x == 1);
  CHECK(csv.pixels[0].y == 2);
  REQUIRE(csv.traces[0].size() == 5);
  CHECK(csv.traces[0][4] == doctest::Approx(2.5));
  CHECK(csv.traces[1] == std::vector<double>(5, 0.0));
  CHECK(csv.times[0] == doctest::Approx(0.25));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_track_csv(path), Error);
}
