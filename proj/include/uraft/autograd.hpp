#pragma once

// Minimal reverse-mode differentiation over Tensor<T>. Each op computes its
// value eagerly and, when any input requires a gradient and recording is
// enabled, captures a closure that accumulates into its inputs' gradients.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "uraft/tensor.hpp"

namespace uraft::ag {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  std::function<void(Node<T>&)> backward_fn;

  /// Gradient storage, zero-initialized on first use.
  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.c, value.h, value.w);
    return grad;
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

template <typename T>
Var<T> constant(Tensor<T> value);
template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad);
/// Same value, cut from the graph.
template <typename T>
Var<T> detach(const Var<T>& x);

/// Builds a node from a precomputed value. `backward` receives the output
/// node and must accumulate into the gradients of inputs that require one.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward);

/// Seeds d(root)/d(root) = 1 for a scalar root and propagates to every leaf.
template <typename T>
void backward(const Var<T>& root);

// Elementwise (identical shapes).
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> square(const Var<T>& a);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> tanh(const Var<T>& a);
template <typename T> Var<T> abs(const Var<T>& a);
/// max(a, 0)^p for p > 0; gradient is zero where a <= 0.
template <typename T> Var<T> pow_relu(const Var<T>& a, T p);
/// 1 - a.
template <typename T> Var<T> one_minus(const Var<T>& a);

// Reductions to a 1x1x1 scalar.
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);

// Channel manipulation.
template <typename T> Var<T> concat(std::span<const Var<T>> parts);
template <typename T> Var<T> slice_channels(const Var<T>& a, int begin, int end);

/// 2-D cross-correlation: weight is (Cout, 1, Cin*k*k), bias (Cout, 1, 1) or null.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int kernel, int stride,
              int pad);

/// 2x2 mean pooling with stride 2 per channel; odd trailing rows/cols dropped.
template <typename T> Var<T> avg_pool2(const Var<T>& a);

/// Per-channel standardization over the spatial plane (no affine terms).
template <typename T> Var<T> instance_norm(const Var<T>& a, T eps = T(1e-5));

/// Separable valid filtering of every channel with the same 1-D taps along
/// rows then columns.
template <typename T>
Var<T> separable_filter(const Var<T>& a, std::span<const T> taps);

/// Same-size separable filtering with replicated borders; taps must have odd
/// length.
template <typename T>
Var<T> smooth(const Var<T>& a, std::span<const T> taps);

/// All-pairs correlation of two (D, H, W) maps: output (H*W, H, W) where
/// channel i*W+j holds <f1(i,j), f2(k,l)> / sqrt(D) over (k,l).
template <typename T> Var<T> correlation(const Var<T>& f1, const Var<T>& f2);

/// Samples each correlation level on a (2r+1)^2 grid around coords / 2^level.
/// coords is (2, H, W) in level-0 cell units (x first). Output channels are
/// level-major, then dy, then dx. When `detach_coords` is set no gradient
/// flows into coords.
template <typename T>
Var<T> correlation_lookup(std::span<const Var<T>> pyramid, const Var<T>& coords, int radius,
                          bool detach_coords);

/// Bilinear upsampling of a (2, h, w) flow by an integer factor with
/// components multiplied by the factor. Pixel centers are aligned.
template <typename T> Var<T> upsample_flow(const Var<T>& flow, int factor);

/// Backward bilinear warp of a (1, H, W) image by a (2, H, W) field with
/// border clamping.
template <typename T> Var<T> warp(const Var<T>& image, const Var<T>& flow);

}  // namespace uraft::ag
