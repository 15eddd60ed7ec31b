#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "uraft/autograd.hpp"
#include "uraft/image.hpp"

namespace uraft::testing {

inline Tensor<double> random_tensor(int c, int h, int w, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(c, h, w);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

inline Image random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> px(static_cast<std::size_t>(h) * w);
  for (auto& v : px) v = dist(rng);
  return Image(h, w, std::move(px));
}

/// Largest relative error between analytic and central-difference gradients
/// of `f` over `probes` random entries of each input.
inline double max_fd_error(
    const std::function<ag::Var<double>(const std::vector<ag::Var<double>>&)>& f,
    std::vector<Tensor<double>> inputs, int probes, std::mt19937_64& rng, double step = 1e-6) {
  std::vector<ag::Var<double>> leaves;
  for (auto& t : inputs) leaves.push_back(ag::leaf(t, true));
  ag::backward(f(leaves));

  auto evaluate = [&](const std::vector<Tensor<double>>& values) {
    ag::NoGradGuard guard;
    std::vector<ag::Var<double>> vars;
    for (const auto& t : values) vars.push_back(ag::constant(t));
    return f(vars)->value.item();
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, inputs[i].size() - 1);
    for (int p = 0; p < probes; ++p) {
      const std::size_t k = pick(rng);
      auto plus = inputs, minus = inputs;
      plus[i].data[k] += step;
      minus[i].data[k] -= step;
      const double numeric = (evaluate(plus) - evaluate(minus)) / (2 * step);
      const double analytic = leaves[i]->grad.empty() ? 0.0 : leaves[i]->grad.data[k];
      const double err = std::abs(numeric - analytic) / std::max(1e-6, std::abs(numeric) + std::abs(analytic));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

/// Weighted sum of all entries: turns any tensor op into a scalar probe.
inline ag::Var<double> weighted_sum(const ag::Var<double>& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor(x->value.c, x->value.h, x->value.w, rng);
  return ag::sum(ag::mul(x, ag::constant(std::move(w))));
}

}  // namespace uraft::testing
