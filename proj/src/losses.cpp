#include "uraft/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "uraft/error.hpp"

namespace uraft {

namespace {

constexpr double kCanonicalWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

}  // namespace

std::vector<double> MsSsimConfig::weights() const {
  validate();
  std::vector<double> w(kCanonicalWeights, kCanonicalWeights + scales);
  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v /= total;
  return w;
}

std::vector<double> MsSsimConfig::gaussian_taps() const {
  std::vector<double> taps(window);
  const double center = (window - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < window; ++i) {
    taps[i] = std::exp(-(i - center) * (i - center) / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

void MsSsimConfig::validate() const {
  if (scales < 1 || scales > 5) throw ArgumentError("ms_ssim: scales must be in [1,5]");
  if (window < 1 || window % 2 == 0) throw ArgumentError("ms_ssim: window must be odd");
  if (!(sigma > 0.0)) throw ArgumentError("ms_ssim: sigma must be positive");
}

void to_json(nlohmann::json& j, const MsSsimConfig& c) {
  j = nlohmann::json{{"scales", c.scales}, {"window", c.window}, {"sigma", c.sigma},
                     {"k1", c.k1},         {"k2", c.k2}};
}

void from_json(const nlohmann::json& j, MsSsimConfig& c) {
  for (const auto& [key, value] : j.items()) {
    if (key != "scales" && key != "window" && key != "sigma" && key != "k1" && key != "k2") {
      throw ArgumentError("unknown ms_ssim config key: " + key);
    }
  }
  MsSsimConfig d;
  c.scales = j.value("scales", d.scales);
  c.window = j.value("window", d.window);
  c.sigma = j.value("sigma", d.sigma);
  c.k1 = j.value("k1", d.k1);
  c.k2 = j.value("k2", d.k2);
  c.validate();
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"smoothness", w.smoothness},
                     {"gamma", w.gamma},
                     {"weight_iterates", w.weight_iterates},
                     {"ms_ssim", w.ms_ssim}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  for (const auto& [key, value] : j.items()) {
    if (key != "smoothness" && key != "gamma" && key != "weight_iterates" && key != "ms_ssim") {
      throw ArgumentError("unknown loss config key: " + key);
    }
  }
  LossWeights d;
  w.smoothness = j.value("smoothness", d.smoothness);
  w.gamma = j.value("gamma", d.gamma);
  w.weight_iterates = j.value("weight_iterates", d.weight_iterates);
  if (j.contains("ms_ssim")) w.ms_ssim = j.at("ms_ssim").get<MsSsimConfig>();
  if (!(w.gamma > 0.0 && w.gamma <= 1.0)) throw ArgumentError("gamma must be in (0,1]");
  if (!(w.smoothness >= 0.0)) throw ArgumentError("smoothness weight must be >= 0");
}

void to_json(nlohmann::json& j, const LossBreakdown& b) {
  j = nlohmann::json{{"forward_similarity", b.forward_similarity},
                     {"backward_similarity", b.backward_similarity},
                     {"smoothness", b.smoothness},
                     {"total", b.total},
                     {"lambda_s", b.lambda_s}};
}

template <typename T>
ag::Var<T> ms_ssim(const ag::Var<T>& a, const ag::Var<T>& b, const MsSsimConfig& config) {
  const auto& av = a->value;
  const auto& bv = b->value;
  if (!av.same_shape(bv) || av.c != 1) {
    throw DimensionMismatch("ms_ssim: images must be single-channel and equal in size");
  }
  config.validate();
  if (std::min(av.h, av.w) < config.min_side()) {
    throw ScaleError("ms_ssim: " + std::to_string(av.h) + "x" + std::to_string(av.w) +
                     " is too small for " + std::to_string(config.scales) + " scales of an " +
                     std::to_string(config.window) + "-tap window (need " +
                     std::to_string(config.min_side()) + ")");
  }
  const auto weights = config.weights();
  std::vector<T> taps;
  for (double t : config.gaussian_taps()) taps.push_back(static_cast<T>(t));
  const T c1 = static_cast<T>(config.k1 * config.k1);
  const T c2 = static_cast<T>(config.k2 * config.k2);

  ag::Var<T> x = a;
  ag::Var<T> y = b;
  ag::Var<T> result;
  for (int s = 0; s < config.scales; ++s) {
    const ag::Var<T> stack_parts[] = {x, y, ag::square(x), ag::square(y), ag::mul(x, y)};
    auto filtered = ag::separable_filter<T>(ag::concat<T>(stack_parts), taps);
    auto mu_x = ag::slice_channels(filtered, 0, 1);
    auto mu_y = ag::slice_channels(filtered, 1, 2);
    auto mu_xx = ag::square(mu_x);
    auto mu_yy = ag::square(mu_y);
    auto mu_xy = ag::mul(mu_x, mu_y);
    auto var_x = ag::sub(ag::slice_channels(filtered, 2, 3), mu_xx);
    auto var_y = ag::sub(ag::slice_channels(filtered, 3, 4), mu_yy);
    auto cov = ag::sub(ag::slice_channels(filtered, 4, 5), mu_xy);
    auto cs_map = ag::div(ag::add_scalar(ag::scale(cov, T(2)), c2),
                          ag::add_scalar(ag::add(var_x, var_y), c2));
    ag::Var<T> term;
    if (s + 1 == config.scales) {
      auto lum = ag::div(ag::add_scalar(ag::scale(mu_xy, T(2)), c1),
                         ag::add_scalar(ag::add(mu_xx, mu_yy), c1));
      term = ag::mean(ag::mul(lum, cs_map));
    } else {
      term = ag::mean(cs_map);
      x = ag::avg_pool2(x);
      y = ag::avg_pool2(y);
    }
    auto powered = ag::pow_relu(term, static_cast<T>(weights[s]));
    result = result ? ag::mul(result, powered) : powered;
  }
  return result;
}

double ms_ssim(const Image& a, const Image& b, const MsSsimConfig& config) {
  ag::NoGradGuard guard;
  return ms_ssim<double>(ag::constant(to_tensor<double>(a)), ag::constant(to_tensor<double>(b)),
                         config)
      ->value.item();
}

template <typename T>
ag::Var<T> smoothness(const ag::Var<T>& field) {
  const auto& v = field->value;
  if (v.c != 2 || v.h < 2 || v.w < 2) {
    throw DimensionMismatch("smoothness: field must be (2, H>=2, W>=2)");
  }
  const int h = v.h, w = v.w;
  const T count = T(h - 1) * T(w - 1);
  T acc = 0;
  for (int c = 0; c < 2; ++c) {
    const T* p = v.plane(c);
    for (int y = 0; y + 1 < h; ++y) {
      for (int x = 0; x + 1 < w; ++x) {
        const T u = p[y * w + x];
        acc += std::abs(p[y * w + x + 1] - u) + std::abs(p[(y + 1) * w + x] - u);
      }
    }
  }
  return ag::make_op<T>(Tensor<T>(1, 1, 1, acc / count), {field}, [count](ag::Node<T>& self) {
    auto& in = self.inputs[0];
    auto& g = in->grad_buffer();
    const auto& v = in->value;
    const int h = v.h, w = v.w;
    const T s = self.grad.data[0] / count;
    auto sign = [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); };
    for (int c = 0; c < 2; ++c) {
      const T* p = v.plane(c);
      T* gp = g.plane(c);
      for (int y = 0; y + 1 < h; ++y) {
        for (int x = 0; x + 1 < w; ++x) {
          const int i = y * w + x;
          const T sx = sign(p[i + 1] - p[i]) * s;
          const T sy = sign(p[i + w] - p[i]) * s;
          gp[i + 1] += sx;
          gp[i + w] += sy;
          gp[i] -= sx + sy;
        }
      }
    }
  });
}

double smoothness(const DisplacementField& field) {
  ag::NoGradGuard guard;
  return smoothness<double>(ag::constant(field_tensor<double>(field)))->value.item();
}

double weighted_iterate_sum(std::span<const double> totals, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ArgumentError("gamma must be in (0,1]");
  const std::size_t n = totals.size();
  double acc = 0.0;
  for (std::size_t k = 1; k <= n; ++k) acc += std::pow(gamma, double(n - k)) * totals[k - 1];
  return acc;
}

template <typename T>
CyclicObjective<T> cyclic_objective(const FlowNet<T>& net, const ag::Var<T>& fixed,
                                    const ag::Var<T>& moving, const LossWeights& weights) {
  const T lambda = static_cast<T>(weights.smoothness);
  auto fwd = net.forward(fixed, moving);
  const std::size_t n = fwd.iterates.size();

  auto warped = ag::warp(moving, fwd.iterates.back());
  auto back = net.forward(moving, warped);
  auto u_back = back.iterates.back();
  auto reconstructed = ag::warp(warped, u_back);
  auto backward_term = ag::one_minus(ms_ssim(moving, reconstructed, weights.ms_ssim));
  auto smooth_back = smoothness(u_back);

  CyclicObjective<T> out;
  const std::size_t first = weights.weight_iterates ? 0 : n - 1;
  ag::Var<T> objective;
  for (std::size_t k = first; k < n; ++k) {
    auto warped_k = k + 1 == n ? warped : ag::warp(moving, fwd.iterates[k]);
    auto forward_term = ag::one_minus(ms_ssim(fixed, warped_k, weights.ms_ssim));
    auto smooth_k = ag::scale(ag::add(smoothness(fwd.iterates[k]), smooth_back), T(0.5));
    auto total_k = ag::add(ag::add(forward_term, backward_term), ag::scale(smooth_k, lambda));
    out.iterate_totals.push_back(double(total_k->value.item()));
    const T w = weights.weight_iterates ? static_cast<T>(std::pow(weights.gamma, double(n - 1 - k)))
                                        : T(1);
    auto weighted = ag::scale(total_k, w);
    objective = objective ? ag::add(objective, weighted) : weighted;
    if (k + 1 == n) {
      out.breakdown.forward_similarity = double(forward_term->value.item());
      out.breakdown.backward_similarity = double(backward_term->value.item());
      out.breakdown.smoothness = double(smooth_k->value.item());
      out.breakdown.total = double(total_k->value.item());
      out.breakdown.lambda_s = weights.smoothness;
    }
  }
  out.objective = objective;
  return out;
}

LossBreakdown cyclic_loss(const FlowNet<float>& net, const Image& fixed, const Image& moving,
                          double lambda_s, const MsSsimConfig& config) {
  ag::NoGradGuard guard;
  LossWeights w;
  w.smoothness = lambda_s;
  w.weight_iterates = false;
  w.ms_ssim = config;
  return cyclic_objective<float>(net, ag::constant(to_tensor<float>(fixed)),
                                 ag::constant(to_tensor<float>(moving)), w)
      .breakdown;
}

double iterate_weighted_loss(const FlowNet<float>& net, const Image& fixed, const Image& moving,
                             double gamma, double lambda_s, const MsSsimConfig& config) {
  ag::NoGradGuard guard;
  LossWeights w;
  w.smoothness = lambda_s;
  w.gamma = gamma;
  w.weight_iterates = true;
  w.ms_ssim = config;
  auto obj = cyclic_objective<float>(net, ag::constant(to_tensor<float>(fixed)),
                                     ag::constant(to_tensor<float>(moving)), w);
  return weighted_iterate_sum(obj.iterate_totals, gamma);
}

template ag::Var<float> ms_ssim<float>(const ag::Var<float>&, const ag::Var<float>&,
                                       const MsSsimConfig&);
template ag::Var<double> ms_ssim<double>(const ag::Var<double>&, const ag::Var<double>&,
                                         const MsSsimConfig&);
template ag::Var<float> smoothness<float>(const ag::Var<float>&);
template ag::Var<double> smoothness<double>(const ag::Var<double>&);
template CyclicObjective<float> cyclic_objective<float>(const FlowNet<float>&,
                                                        const ag::Var<float>&,
                                                        const ag::Var<float>&, const LossWeights&);
template CyclicObjective<double> cyclic_objective<double>(const FlowNet<double>&,
                                                          const ag::Var<double>&,
                                                          const ag::Var<double>&,
                                                          const LossWeights&);

}  // namespace uraft
