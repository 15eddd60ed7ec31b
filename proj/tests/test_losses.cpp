#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "msssim_oracle.hpp"
#include "test_support.hpp"
#include "uraft/error.hpp"
#include "uraft/losses.hpp"

using namespace uraft;
using uraft::testing::random_image;

namespace {

uraft::testing::Plane plane_of(const Image& im) {
  uraft::testing::Plane p{im.height(), im.width(), {}};
  for (float v : im.pixels()) p.v.push_back(v);
  return p;
}

DisplacementField ramp_field(int n) {
  DisplacementField f(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) f.set(x, y, float(x), 0.0f);
  return f;
}

Image constant_image(int n, float v) {
  return Image(n, n, std::vector<float>(static_cast<std::size_t>(n) * n, v));
}

}  // namespace

TEST_CASE("ms_ssim exponents are the truncated canonical weights") {
  MsSsimConfig c;
  auto w = c.weights();
  REQUIRE(w.size() == 3);
  const double s = 0.0448 + 0.2856 + 0.3001;
  CHECK(w[0] == doctest::Approx(0.0448 / s));
  CHECK(w[2] == doctest::Approx(0.3001 / s));
  CHECK(c.min_side() == 44);
}

TEST_CASE("ms_ssim self-similarity, constants and symmetry") {
  std::mt19937_64 rng(11);
  auto a = random_image(64, 64, rng);
  auto b = random_image(64, 64, rng);
  CHECK(std::abs(ms_ssim(a, a) - 1.0) <= 1e-6);
  CHECK(std::abs(ms_ssim(constant_image(64, 0.4f), constant_image(64, 0.4f)) - 1.0) <= 1e-6);
  CHECK(std::abs(ms_ssim(a, b) - ms_ssim(b, a)) <= 1e-6);
}

TEST_CASE("ms_ssim agrees with the sliding-window oracle on noise") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 3; ++trial) {
    auto a = random_image(64, 64, rng);
    auto b = random_image(64, 64, rng);
    const double got = ms_ssim(a, b);
    const double want = uraft::testing::ms_ssim_oracle(plane_of(a), plane_of(b), 3);
    CHECK(std::abs(got - want) <= 1e-4);
    CHECK(got < 0.3);
  }
}

TEST_CASE("ms_ssim float and double graphs agree") {
  std::mt19937_64 rng(13);
  auto a = random_image(48, 48, rng);
  auto b = random_image(48, 48, rng);
  ag::NoGradGuard guard;
  const float f = ms_ssim<float>(ag::constant(to_tensor<float>(a)), ag::constant(to_tensor<float>(b)))
                      ->value.item();
  CHECK(f == doctest::Approx(ms_ssim(a, b)).epsilon(1e-4));
}

TEST_CASE("ms_ssim contract errors") {
  std::mt19937_64 rng(14);
  CHECK_THROWS_AS(ms_ssim(random_image(64, 64, rng), random_image(64, 48, rng)), DimensionMismatch);
  CHECK_THROWS_AS(ms_ssim(random_image(40, 40, rng), random_image(40, 40, rng)), ScaleError);
  MsSsimConfig one;
  one.scales = 1;
  CHECK_NOTHROW(ms_ssim(random_image(16, 16, rng), random_image(16, 16, rng), one));
}

TEST_CASE("ms_ssim gradient matches finite differences") {
  std::mt19937_64 rng(15);
  auto a = uraft::testing::random_tensor(1, 48, 48, rng, 0.2, 0.8);
  auto b = uraft::testing::random_tensor(1, 48, 48, rng, 0.2, 0.8);
  // Correlate b with a so every term stays comfortably positive.
  for (std::size_t i = 0; i < b.size(); ++i) b.data[i] = 0.7 * a.data[i] + 0.3 * b.data[i];
  auto f = [](const std::vector<ag::Var<double>>& x) { return ms_ssim<double>(x[0], x[1]); };
  CHECK(uraft::testing::max_fd_error(f, {a, b}, 15, rng, 1e-5) < 1e-5);
}

TEST_CASE("smoothness closed forms") {
  CHECK(smoothness(ramp_field(4)) == doctest::Approx(1.0));
  DisplacementField constant(5, 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) constant.set(x, y, 2.0f, -1.0f);
  CHECK(smoothness(constant) == 0.0);

  std::mt19937_64 rng(16);
  std::normal_distribution<float> n(0.0f, 1.0f);
  DisplacementField f(6, 7), doubled(6, 7), shifted(6, 7);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 7; ++x) {
      const float a = n(rng), b = n(rng);
      f.set(x, y, a, b);
      doubled.set(x, y, 2 * a, 2 * b);
      shifted.set(x, y, a + 0.5f, b - 3.0f);
    }
  CHECK(smoothness(doubled) == doctest::Approx(2 * smoothness(f)));
  CHECK(smoothness(shifted) == doctest::Approx(smoothness(f)).epsilon(1e-5));
}

TEST_CASE("smoothness gradient matches finite differences") {
  std::mt19937_64 rng(17);
  auto field = uraft::testing::random_tensor(2, 5, 6, rng);
  auto f = [](const std::vector<ag::Var<double>>& x) { return smoothness<double>(x[0]); };
  CHECK(uraft::testing::max_fd_error(f, {field}, 20, rng) < 1e-6);
}

TEST_CASE("weighted iterate sum") {
  const double ones[] = {1.0, 1.0, 1.0};
  CHECK(weighted_iterate_sum(ones, 0.8) == doctest::Approx(2.44));
  const double one[] = {0.7};
  CHECK(weighted_iterate_sum(one, 0.8) == doctest::Approx(0.7));
  CHECK(weighted_iterate_sum(ones, 1.0) == doctest::Approx(3.0));
  CHECK_THROWS_AS(weighted_iterate_sum(ones, 0.0), ArgumentError);
}

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.feature_dim = 8;
  c.context_dim = 6;
  c.hidden_dim = 6;
  c.pyramid_levels = 2;
  c.lookup_radius = 1;
  c.iterations = 3;
  return c;
}

}  // namespace

TEST_CASE("cyclic loss of a zero-flow model on identical images is zero") {
  std::mt19937_64 rng(18);
  FlowNet<float> net(small_config(), 3);
  net.zero_flow_head();
  auto img = random_image(64, 64, rng);
  auto b = cyclic_loss(net, img, img, 0.1);
  CHECK(b.forward_similarity == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(b.backward_similarity == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(b.smoothness == 0.0);
  CHECK(b.total == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("cyclic loss breakdown is consistent") {
  std::mt19937_64 rng(19);
  FlowNet<float> net(small_config(), 4);
  auto f = random_image(64, 64, rng);
  auto m = random_image(64, 64, rng);
  auto b = cyclic_loss(net, f, m, 0.1);
  CHECK(std::isfinite(b.total));
  CHECK(b.total >= 0.1 * b.smoothness);
  CHECK(b.total == doctest::Approx(b.forward_similarity + b.backward_similarity + 0.1 * b.smoothness));
  CHECK(b.forward_similarity >= 0.0);
  CHECK(b.forward_similarity <= 2.0);
}

TEST_CASE("iterate weighting collapses for a single iterate") {
  std::mt19937_64 rng(20);
  auto cfg = small_config();
  cfg.iterations = 1;
  FlowNet<float> net(cfg, 5);
  auto f = random_image(64, 64, rng);
  auto m = random_image(64, 64, rng);
  CHECK(iterate_weighted_loss(net, f, m, 0.8, 0.1) == doctest::Approx(cyclic_loss(net, f, m, 0.1).total));
}

TEST_CASE("iterate weighting with gamma 1 and a zero-flow model") {
  std::mt19937_64 rng(21);
  FlowNet<float> net(small_config(), 6);
  net.zero_flow_head();
  auto f = random_image(64, 64, rng);
  auto m = random_image(64, 64, rng);
  const double single = cyclic_loss(net, f, m, 0.1).total;
  CHECK(iterate_weighted_loss(net, f, m, 1.0, 0.1) == doctest::Approx(3 * single).epsilon(1e-5));
}

TEST_CASE("cyclic loss gradient in float64 matches finite differences") {
  std::mt19937_64 rng(22);
  auto cfg = small_config();
  cfg.detach_iterates = false;
  FlowNet<double> net(cfg, 7);
  auto fixed = ag::constant(to_tensor<double>(random_image(64, 64, rng)));
  auto moving = ag::constant(to_tensor<double>(random_image(64, 64, rng)));
  LossWeights w;
  w.weight_iterates = false;

  auto& params = net.parameters();
  for (auto& p : params) p.var->requires_grad = true;
  ag::backward(cyclic_objective<double>(net, fixed, moving, w).objective);

  auto evaluate = [&] {
    ag::NoGradGuard guard;
    return cyclic_objective<double>(net, fixed, moving, w).breakdown.total;
  };
  // Probe the flow head and the first feature layer.
  int probed = 0;
  for (auto& p : params) {
    if (p.name.find("head2.weight") == std::string::npos &&
        p.name.find("fnet.conv1.weight") == std::string::npos)
      continue;
    for (std::size_t k : {std::size_t(0), p.var->value.size() / 2}) {
      auto& v = p.var->value.data[k];
      const double saved = v, h = 1e-4;
      v = saved + h;
      const double up = evaluate();
      v = saved - h;
      const double down = evaluate();
      v = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p.var->grad.data[k];
      CAPTURE(p.name);
      CAPTURE(numeric);
      CAPTURE(analytic);
      CHECK(std::abs(numeric - analytic) <= 1e-2 * std::max(std::abs(numeric), 1e-8));
      ++probed;
    }
  }
  CHECK(probed == 4);
}
