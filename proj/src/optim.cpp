#include "uraft/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace uraft {

Adam::Adam(std::vector<NamedParameter<float>>& params, AdamOptions options)
    : params_(params), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var->value.size(), 0.0);
    v_.emplace_back(p.var->value.size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(t_));
  const double c2 = 1.0 - std::pow(b2, double(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& node = *params_[i].var;
    if (node.grad.empty()) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < m.size(); ++k) {
      const double g = node.grad.data[k];
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      const double update = lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + options_.epsilon);
      node.value.data[k] = static_cast<float>(node.value.data[k] - update);
    }
  }
}

double gradient_norm(const std::vector<NamedParameter<float>>& params) {
  double total = 0.0;
  for (const auto& p : params) {
    for (float g : p.var->grad.data) total += double(g) * g;
  }
  return std::sqrt(total);
}

double clip_gradients(std::vector<NamedParameter<float>>& params, double max_norm) {
  const double norm = gradient_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& p : params)
      for (float& g : p.var->grad.data) g *= s;
  }
  return norm;
}

void zero_gradients(std::vector<NamedParameter<float>>& params) {
  for (auto& p : params) std::fill(p.var->grad.data.begin(), p.var->grad.data.end(), 0.0f);
}

double cosine_lr(std::int64_t step, std::int64_t total, double base_lr, double min_lr,
                 std::int64_t warmup) {
  if (warmup > 0 && step <= warmup) return base_lr * double(step) / double(warmup);
  const std::int64_t span = std::max<std::int64_t>(1, total - warmup - 1);
  const double progress = std::clamp(double(step - warmup - 1) / double(span), 0.0, 1.0);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace uraft
