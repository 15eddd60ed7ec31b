#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "uraft/error.hpp"
#include "uraft/flow_net.hpp"

using namespace uraft;
using uraft::testing::random_image;
using uraft::testing::random_tensor;

namespace {

// C0 oracle: explicit double loop over every (i,j,k,l).
double brute_corr(const Tensor<double>& a, const Tensor<double>& b, int i, int j, int k, int l) {
  double s = 0.0;
  for (int d = 0; d < a.c; ++d) s += a.at(d, i, j) * b.at(d, k, l);
  return s / std::sqrt(double(a.c));
}

double channel_sum(const Tensor<double>& t) {
  double s = 0.0;
  for (double v : t.data) s += v;
  return s;
}

ModelConfig small_config() {
  ModelConfig c;
  c.feature_dim = 8;
  c.context_dim = 6;
  c.hidden_dim = 8;
  c.pyramid_levels = 2;
  c.lookup_radius = 2;
  c.iterations = 5;
  return c;
}

}  // namespace

TEST_CASE("default network size") {
  FlowNet<float> net(ModelConfig{}, 1);
  CHECK(net.parameter_count() == 400896);
  CHECK(ModelConfig{}.correlation_channels() == 324);
}

TEST_CASE("encoder shapes, determinism and divisibility") {
  FlowNet<float> net(ModelConfig{}, 7);
  std::mt19937_64 rng(1);
  auto im = random_image(64, 64, rng);
  auto f = net.encode(im, EncoderKind::feature);
  CHECK(f.c == 96);
  CHECK(f.h == 8);
  CHECK(f.w == 8);
  auto c = net.encode(im, EncoderKind::context);
  CHECK(c.c == 96 + 64);
  CHECK(net.encode(im, EncoderKind::feature).data == f.data);
  for (float v : f.data) CHECK(std::isfinite(v));
  CHECK_THROWS_AS(net.encode(random_image(60, 60, rng), EncoderKind::feature), DimensionError);
  CHECK_THROWS_AS(net.predict(random_image(64, 64, rng), random_image(64, 72, rng)),
                  DimensionMismatch);
}

TEST_CASE("correlation of constant and orthogonal features") {
  Tensor<double> ones(4, 3, 3, 1.0);
  ag::NoGradGuard guard;
  auto c = ag::correlation(ag::constant(ones), ag::constant(ones));
  for (double v : c->value.data) CHECK(v == 2.0);

  Tensor<double> a(4, 3, 3), b(4, 3, 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      a.at(0, y, x) = 1.0 + x;
      a.at(1, y, x) = -y;
      b.at(2, y, x) = 3.0 - x * y;
      b.at(3, y, x) = 0.5;
    }
  auto z = ag::correlation(ag::constant(a), ag::constant(b));
  for (double v : z->value.data) CHECK(v == 0.0);
}

TEST_CASE("correlation volume matches brute force on random 4x4x8 maps") {
  std::mt19937_64 rng(2);
  ModelConfig cfg = small_config();
  cfg.feature_dim = 8;
  cfg.pyramid_levels = 3;
  FlowNet<float> net(cfg, 3);
  for (int trial = 0; trial < 5; ++trial) {
    auto a = random_tensor(8, 4, 4, rng), b = random_tensor(8, 4, 4, rng);
    Tensor<float> af(8, 4, 4), bf(8, 4, 4);
    for (std::size_t i = 0; i < a.size(); ++i) {
      af.data[i] = float(a.data[i]);
      bf.data[i] = float(b.data[i]);
      a.data[i] = af.data[i];
      b.data[i] = bf.data[i];
    }
    ag::NoGradGuard guard;
    auto pyr = net.correlation_pyramid(ag::constant(af), ag::constant(bf));
    REQUIRE(pyr.size() == 3);
    const auto& c0 = pyr[0]->value;
    REQUIRE(c0.c == 16);
    double worst = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k)
          for (int l = 0; l < 4; ++l)
            worst = std::max(worst, std::abs(c0.at(i * 4 + j, k, l) - brute_corr(a, b, i, j, k, l)));
    CHECK(worst <= 1e-5);

    Tensor<double> t0(c0.c, c0.h, c0.w), t1(pyr[1]->value.c, pyr[1]->value.h, pyr[1]->value.w);
    std::copy(c0.data.begin(), c0.data.end(), t0.data.begin());
    std::copy(pyr[1]->value.data.begin(), pyr[1]->value.data.end(), t1.data.begin());
    CHECK(t1.h == 2);
    CHECK(std::abs(4.0 * channel_sum(t1) - channel_sum(t0)) <= 1e-4);
    // Each pooled entry is the mean of its 2x2 block.
    for (int ch = 0; ch < 16; ++ch)
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
          const double m = 0.25 * (t0.at(ch, 2 * y, 2 * x) + t0.at(ch, 2 * y, 2 * x + 1) +
                                   t0.at(ch, 2 * y + 1, 2 * x) + t0.at(ch, 2 * y + 1, 2 * x + 1));
          CHECK(t1.at(ch, y, x) == doctest::Approx(m).epsilon(1e-6));
        }
  }
}

TEST_CASE("correlation rejects mismatched maps") {
  ag::NoGradGuard guard;
  CHECK_THROWS_AS(ag::correlation(ag::constant(Tensor<double>(4, 3, 3)),
                                  ag::constant(Tensor<double>(4, 3, 2))),
                  DimensionMismatch);
}

TEST_CASE("lookup: zero flow centre tap and integer-offset oracle") {
  std::mt19937_64 rng(4);
  ModelConfig cfg;  // defaults: 4 levels, radius 4
  FlowNet<double> net(cfg, 5);
  const int n = 8;
  auto a = random_tensor(16, n, n, rng), b = random_tensor(16, n, n, rng);
  ag::NoGradGuard guard;
  auto pyr = net.correlation_pyramid(ag::constant(a), ag::constant(b));
  REQUIRE(pyr.size() == 4);

  auto zero = net.lookup(pyr, ag::constant(Tensor<double>(2, n, n)));
  CHECK(zero->value.c == 324);
  const int centre = 4 * 9 + 4;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      CHECK(zero->value.at(centre, i, j) == pyr[0]->value.at(i * n + j, i, j));

  std::uniform_int_distribution<int> off(-5, 5);
  Tensor<double> flow(2, n, n);
  for (auto& v : flow.data) v = off(rng);
  auto got = net.lookup(pyr, ag::constant(flow));
  int checked = 0;
  for (int level = 0; level < 4; ++level) {
    const auto& lv = pyr[level]->value;
    const int s = 1 << level;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const int px = j + int(flow.at(0, i, j)), py = i + int(flow.at(1, i, j));
        // Only positions that land on the level's integer grid.
        if (px % s != 0 || py % s != 0) continue;
        for (int dy = -4; dy <= 4; ++dy)
          for (int dx = -4; dx <= 4; ++dx) {
            const int kx = std::clamp(px / s + dx, 0, lv.w - 1);
            const int ky = std::clamp(py / s + dy, 0, lv.h - 1);
            const int ch = level * 81 + (dy + 4) * 9 + (dx + 4);
            CHECK(got->value.at(ch, i, j) == lv.at(i * n + j, ky, kx));
            ++checked;
          }
      }
  }
  CHECK(checked > 81 * n * n);
}

TEST_CASE("update step: range, shape and determinism") {
  std::mt19937_64 rng(6);
  ModelConfig cfg = small_config();
  FlowNet<double> net(cfg, 8);
  ag::NoGradGuard guard;
  auto hidden = ag::constant(random_tensor(cfg.hidden_dim, 4, 4, rng));
  auto context = ag::constant(random_tensor(cfg.context_dim, 4, 4, rng));
  auto corr = ag::constant(random_tensor(cfg.correlation_channels(), 4, 4, rng, -3, 3));
  auto flow = ag::constant(random_tensor(2, 4, 4, rng, -2, 2));
  auto [h1, d1] = net.update_step(hidden, context, corr, flow);
  auto [h2, d2] = net.update_step(hidden, context, corr, flow);
  CHECK(h1->value.data == h2->value.data);
  CHECK(d1->value.data == d2->value.data);
  CHECK(d1->value.same_shape(flow->value));
  CHECK(h1->value.same_shape(hidden->value));
  for (double v : h1->value.data) CHECK(std::abs(v) < 1.0);
  for (double v : d1->value.data) CHECK(std::isfinite(v));
}

TEST_CASE("prediction iterates and telescoping") {
  std::mt19937_64 rng(9);
  ModelConfig cfg = small_config();
  FlowNet<double> net(cfg, 10);
  auto f = random_image(32, 40, rng), m = random_image(32, 40, rng);
  ag::NoGradGuard guard;
  auto fwd = net.forward(ag::constant(to_tensor<double>(f)), ag::constant(to_tensor<double>(m)));
  REQUIRE(fwd.iterates.size() == 5);
  REQUIRE(fwd.deltas.size() == 5);
  Tensor<double> sum(2, 4, 5);
  for (const auto& d : fwd.deltas)
    for (std::size_t i = 0; i < sum.size(); ++i) sum.data[i] += d->value.data[i];
  for (std::size_t i = 0; i < sum.size(); ++i)
    CHECK(fwd.final_low_res->value.data[i] == doctest::Approx(sum.data[i]).epsilon(1e-12));
  for (const auto& it : fwd.iterates) {
    CHECK(it->value.c == 2);
    CHECK(it->value.h == 32);
    CHECK(it->value.w == 40);
  }
  auto all = net.predict_all(f, m);
  CHECK(all.iterates.size() == 5);
  CHECK(all.final_field().height() == 32);
  CHECK(all.final_field().width() == 40);
}

TEST_CASE("zeroed head gives exactly zero flow") {
  std::mt19937_64 rng(11);
  FlowNet<float> net(small_config(), 12);
  net.zero_flow_head();
  auto u = net.predict(random_image(32, 32, rng), random_image(32, 32, rng));
  CHECK(u.max_magnitude() == 0.0);
}

TEST_CASE("construction is deterministic in the seed") {
  FlowNet<float> a(ModelConfig{}, 42), b(ModelConfig{}, 42), c(ModelConfig{}, 43);
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters()[i].name == b.parameters()[i].name);
    all_same = all_same && a.parameters()[i].var->value.data == b.parameters()[i].var->value.data;
    any_diff = any_diff || a.parameters()[i].var->value.data != c.parameters()[i].var->value.data;
  }
  CHECK(all_same);
  CHECK(any_diff);
  std::mt19937_64 rng(13);
  auto f = random_image(64, 64, rng), m = random_image(64, 64, rng);
  CHECK(a.predict(f, m) == b.predict(f, m));
}

TEST_CASE("model config validation and JSON") {
  ModelConfig c;
  c.iterations = 12;
  c.downsample_factor = 4;
  nlohmann::json j = c;
  CHECK(j.get<ModelConfig>() == c);
  j["bogus"] = 1;
  CHECK_THROWS(j.get<ModelConfig>());
  ModelConfig bad;
  bad.downsample_factor = 3;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = ModelConfig{};
  bad.feature_dim = 0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = ModelConfig{};
  bad.pyramid_levels = 0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("throughput report") {
  FlowNet<float> net(ModelConfig{}, 1);
  auto r = throughput_report(net, 128, 128, 5);
  CHECK(r.height == 128);
  CHECK(r.iterations == 8);
  CHECK(r.trial_seconds.size() == 5);
  CHECK(std::isfinite(r.fps));
  CHECK(r.fps > 0.0);
  nlohmann::json j = r;
  CHECK(j.contains("fps"));
  CHECK_THROWS_AS(throughput_report(net, 128, 128, 4), ArgumentError);
}

TEST_CASE("more refinement steps are not faster") {
  ModelConfig c16;
  c16.iterations = 16;
  FlowNet<float> n8(ModelConfig{}, 1), n16(c16, 1);
  auto r8 = throughput_report(n8, 64, 64, 20);
  auto r16 = throughput_report(n16, 64, 64, 20);
  CHECK(r16.fps <= r8.fps);
}
