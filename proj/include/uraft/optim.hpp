#pragma once

#include <cstdint>
#include <vector>

#include "uraft/flow_net.hpp"

namespace uraft {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam over a fixed list of float parameters.
class Adam {
 public:
  explicit Adam(std::vector<NamedParameter<float>>& params, AdamOptions options = {});

  /// Applies one update with learning rate `lr` using the parameters'
  /// accumulated gradients (missing gradients count as zero).
  void step(double lr);
  std::int64_t steps() const { return t_; }

 private:
  std::vector<NamedParameter<float>>& params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

/// Global L2 norm of all parameter gradients.
double gradient_norm(const std::vector<NamedParameter<float>>& params);
/// Rescales gradients so their global norm is at most max_norm. Returns the
/// norm before clipping.
double clip_gradients(std::vector<NamedParameter<float>>& params, double max_norm);
void zero_gradients(std::vector<NamedParameter<float>>& params);

/// Cosine decay from base_lr at step 1 to min_lr at step `total`, after an
/// optional linear warmup.
double cosine_lr(std::int64_t step, std::int64_t total, double base_lr, double min_lr,
                 std::int64_t warmup = 0);

}  // namespace uraft
