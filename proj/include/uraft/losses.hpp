#pragma once

#include <span>
#include <vector>

#include "json.hpp"
#include "uraft/autograd.hpp"
#include "uraft/flow_net.hpp"
#include "uraft/image.hpp"

namespace uraft {

struct MsSsimConfig {
  int scales = 3;
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;

  /// Canonical five-scale exponents truncated to `scales` and renormalized.
  std::vector<double> weights() const;
  /// Normalized Gaussian taps of length `window`.
  std::vector<double> gaussian_taps() const;
  /// Smallest image side supporting every dyadic scale of the window.
  int min_side() const { return window << (scales - 1); }
  void validate() const;
};

void to_json(nlohmann::json& j, const MsSsimConfig& c);
void from_json(const nlohmann::json& j, MsSsimConfig& c);

/// Differentiable MS-SSIM of two (1, H, W) images. Throws DimensionMismatch
/// or ScaleError.
template <typename T>
ag::Var<T> ms_ssim(const ag::Var<T>& a, const ag::Var<T>& b, const MsSsimConfig& config = {});
double ms_ssim(const Image& a, const Image& b, const MsSsimConfig& config = {});

/// Mean first-order total variation of a (2, H, W) field per interior pixel.
template <typename T>
ag::Var<T> smoothness(const ag::Var<T>& field);
double smoothness(const DisplacementField& field);

struct LossWeights {
  double smoothness = 0.1;  // lambda_s
  double gamma = 0.8;       // per-iterate decay
  bool weight_iterates = true;
  MsSsimConfig ms_ssim;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

struct LossBreakdown {
  double forward_similarity = 0.0;   // 1 - MSSSIM(I_f, I_f')
  double backward_similarity = 0.0;  // 1 - MSSSIM(I_m, I_m')
  double smoothness = 0.0;           // mean over the two fields
  double total = 0.0;
  double lambda_s = 0.0;
};

void to_json(nlohmann::json& j, const LossBreakdown& b);

/// sum_k gamma^(N-k) * totals[k-1] for k = 1..N.
double weighted_iterate_sum(std::span<const double> totals, double gamma);

template <typename T>
struct CyclicObjective {
  ag::Var<T> objective;            // what training minimizes
  LossBreakdown breakdown;         // final-iterate cyclic loss
  std::vector<double> iterate_totals;
};

/// Builds the cyclic reconstruction objective on the graph:
/// u_fm = g(I_f, I_m), I_f' = warp(I_m, u_fm), u_mf' = g(I_m, I_f'),
/// I_m' = warp(I_f', u_mf'). The objective is the final-iterate total, or the
/// gamma-weighted sum over forward iterates when weights.weight_iterates.
template <typename T>
CyclicObjective<T> cyclic_objective(const FlowNet<T>& net, const ag::Var<T>& fixed,
                                    const ag::Var<T>& moving, const LossWeights& weights);

LossBreakdown cyclic_loss(const FlowNet<float>& net, const Image& fixed, const Image& moving,
                          double lambda_s, const MsSsimConfig& config = {});
double iterate_weighted_loss(const FlowNet<float>& net, const Image& fixed, const Image& moving,
                             double gamma, double lambda_s, const MsSsimConfig& config = {});

}  // namespace uraft
