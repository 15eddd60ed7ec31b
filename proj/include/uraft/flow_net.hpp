#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "uraft/autograd.hpp"
#include "uraft/image.hpp"
#include "uraft/tensor.hpp"

namespace uraft {

/// Architecture hyperparameters of the recurrent all-pairs flow network.
struct ModelConfig {
  int feature_dim = 96;
  int context_dim = 64;
  int hidden_dim = 96;
  int downsample_factor = 8;  // 4 or 8
  int pyramid_levels = 4;
  int lookup_radius = 4;
  int iterations = 8;
  // Cut the gradient path through the flow fed back into each iteration's
  // lookup and motion encoder (the usual recurrent-flow training setup).
  // Turning it off gives the exact gradient of the unrolled computation.
  bool detach_iterates = true;

  /// Throws ArgumentError on a non-positive or unsupported value.
  void validate() const;
  /// Correlation feature length: pyramid_levels * (2r+1)^2.
  int correlation_channels() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Rejects unknown keys.
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Anything that maps a (fixed, moving) pair to a displacement field with
/// I_f'(p) = I_m(p + u(p)).
class FlowPredictor {
 public:
  virtual ~FlowPredictor() = default;
  virtual DisplacementField predict(const Image& fixed, const Image& moving) const = 0;
  virtual std::string id() const = 0;
};

/// One full-resolution field per refinement step; the last is the output.
struct FlowPrediction {
  std::vector<DisplacementField> iterates;
  const DisplacementField& final_field() const { return iterates.back(); }
};

enum class EncoderKind { feature, context };

template <typename T>
struct NamedParameter {
  std::string name;
  ag::Var<T> var;
};

template <typename T>
struct Conv {
  ag::Var<T> weight;  // (out, 1, in*k*k)
  ag::Var<T> bias;    // (out, 1, 1)
  int in = 0;
  int out = 0;
  int kernel = 1;
  int stride = 1;

  ag::Var<T> operator()(const ag::Var<T>& x) const {
    return ag::conv2d(x, weight, bias, kernel, stride, kernel / 2);
  }
};

/// Recurrent all-pairs field transform network g_theta(I_f, I_m).
template <typename T>
class FlowNet final : public FlowPredictor {
 public:
  struct Forward {
    std::vector<ag::Var<T>> iterates;  // (2, H, W) full resolution, pixels
    std::vector<ag::Var<T>> deltas;    // (2, H/f, W/f) per-step increments, feature cells
    ag::Var<T> final_low_res;          // (2, H/f, W/f)
  };

  FlowNet(ModelConfig config, std::uint64_t seed);
  // Parameters are shared graph leaves; copying would alias them.
  FlowNet(const FlowNet&) = delete;
  FlowNet& operator=(const FlowNet&) = delete;
  FlowNet(FlowNet&&) noexcept = default;
  FlowNet& operator=(FlowNet&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  std::vector<NamedParameter<T>>& parameters() { return params_; }
  const std::vector<NamedParameter<T>>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  /// Throws DimensionMismatch (pair sizes differ) or DimensionError (not
  /// divisible by the downsample factor, or too small for the pyramid).
  void check_input(int height, int width) const;
  void check_pair(int fh, int fw, int mh, int mw) const;

  ag::Var<T> encode(const ag::Var<T>& image, EncoderKind which) const;
  Tensor<T> encode(const Image& image, EncoderKind which) const;
  std::vector<ag::Var<T>> correlation_pyramid(const ag::Var<T>& f_fixed,
                                              const ag::Var<T>& f_moving) const;
  /// flow is (2, h, w) in feature cells.
  ag::Var<T> lookup(const std::vector<ag::Var<T>>& pyramid, const ag::Var<T>& flow) const;
  /// Returns (hidden', delta_flow).
  std::pair<ag::Var<T>, ag::Var<T>> update_step(const ag::Var<T>& hidden,
                                                const ag::Var<T>& context,
                                                const ag::Var<T>& correlation_features,
                                                const ag::Var<T>& flow) const;

  /// Images as (1, H, W) tensors in [0,1].
  Forward forward(const ag::Var<T>& fixed, const ag::Var<T>& moving) const;
  FlowPrediction predict_all(const Image& fixed, const Image& moving) const;
  DisplacementField predict(const Image& fixed, const Image& moving) const override;
  std::string id() const override { return model_id_; }
  void set_id(std::string id) { model_id_ = std::move(id); }

  /// Sets the last flow-head layer to zero so every delta is exactly zero.
  void zero_flow_head();

  /// Parameter values copied into a network of another precision.
  template <typename U>
  FlowNet<U> cast() const {
    FlowNet<U> other(config_, seed_);
    auto& dst = other.parameters();
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& src = params_[i].var->value.data;
      auto& out = dst[i].var->value.data;
      for (std::size_t k = 0; k < src.size(); ++k) out[k] = static_cast<U>(src[k]);
    }
    other.set_id(model_id_);
    return other;
  }

 private:
  Conv<T> make_conv(const std::string& name, int in, int out, int kernel, int stride,
                    double gain);

  ModelConfig config_;
  std::uint64_t seed_;
  std::string model_id_ = "flow_net";
  std::vector<NamedParameter<T>> params_;
  std::mt19937_64 rng_;

  struct Encoder {
    Conv<T> c1, c2, c3, c4, c5, out;
  };
  Encoder feature_encoder_, context_encoder_;
  Conv<T> corr_in_, flow_in_, motion_, gate_z_, gate_r_, cand_h_, cand_x_, head1_, head2_;

  Encoder make_encoder(const std::string& prefix, int out_channels);
  ag::Var<T> run_encoder(const Encoder& e, const ag::Var<T>& image, bool normalize) const;
};

/// Converts an Image to a (1, H, W) tensor.
template <typename T>
Tensor<T> to_tensor(const Image& image);
/// Converts a (2, H, W) tensor to a field.
template <typename T>
DisplacementField to_field(const Tensor<T>& t);
template <typename T>
Tensor<T> field_tensor(const DisplacementField& f);

struct ThroughputReport {
  int height = 0;
  int width = 0;
  int iterations = 0;
  int trials = 0;
  double median_seconds = 0.0;
  double fps = 0.0;
  std::vector<double> trial_seconds;
};

void to_json(nlohmann::json& j, const ThroughputReport& r);

/// Median wall-clock inference rate of predict() on random images.
/// Throws ArgumentError when trials < 5.
ThroughputReport throughput_report(const FlowNet<float>& model, int height, int width,
                                   int trials);

}  // namespace uraft
