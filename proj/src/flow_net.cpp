#include "uraft/flow_net.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <string>

#include "uraft/error.hpp"

namespace uraft {

namespace {

// Fixed widths of the encoder stages and the update operator.
constexpr int kEncoderWidths[3] = {16, 32, 64};
constexpr int kCorrFeatures = 64;
constexpr int kFlowFeatures = 16;
constexpr int kMotionFeatures = 46;  // + 2 raw flow channels
constexpr int kHeadWidth = 64;

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ArgumentError(std::string("model config: ") + name + " must be positive");
  };
  positive(feature_dim, "feature_dim");
  positive(context_dim, "context_dim");
  positive(hidden_dim, "hidden_dim");
  positive(pyramid_levels, "pyramid_levels");
  positive(lookup_radius, "lookup_radius");
  positive(iterations, "iterations");
  if (downsample_factor != 4 && downsample_factor != 8) {
    throw ArgumentError("model config: downsample_factor must be 4 or 8");
  }
}

int ModelConfig::correlation_channels() const {
  const int side = 2 * lookup_radius + 1;
  return pyramid_levels * side * side;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"feature_dim", c.feature_dim},
                     {"context_dim", c.context_dim},
                     {"hidden_dim", c.hidden_dim},
                     {"downsample_factor", c.downsample_factor},
                     {"pyramid_levels", c.pyramid_levels},
                     {"lookup_radius", c.lookup_radius},
                     {"iterations", c.iterations},
                     {"detach_iterates", c.detach_iterates}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const char* known[] = {"feature_dim",    "context_dim",   "hidden_dim",
                                "downsample_factor", "pyramid_levels", "lookup_radius",
                                "iterations",     "detach_iterates"};
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(std::begin(known), std::end(known),
                     [&](const char* k) { return key == k; }) == std::end(known)) {
      throw ArgumentError("unknown model config key: " + key);
    }
  }
  ModelConfig d;
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  c.context_dim = j.value("context_dim", d.context_dim);
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.downsample_factor = j.value("downsample_factor", d.downsample_factor);
  c.pyramid_levels = j.value("pyramid_levels", d.pyramid_levels);
  c.lookup_radius = j.value("lookup_radius", d.lookup_radius);
  c.iterations = j.value("iterations", d.iterations);
  c.detach_iterates = j.value("detach_iterates", d.detach_iterates);
  c.validate();
}

template <typename T>
Tensor<T> to_tensor(const Image& image) {
  Tensor<T> t(1, image.height(), image.width());
  auto px = image.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) t.data[i] = static_cast<T>(px[i]);
  return t;
}

template <typename T>
DisplacementField to_field(const Tensor<T>& t) {
  if (t.c != 2) throw DimensionMismatch("field tensor must have 2 channels");
  std::vector<float> ux(t.plane_size()), uy(t.plane_size());
  for (std::size_t i = 0; i < ux.size(); ++i) {
    ux[i] = static_cast<float>(t.plane(0)[i]);
    uy[i] = static_cast<float>(t.plane(1)[i]);
  }
  return DisplacementField(t.h, t.w, std::move(ux), std::move(uy));
}

template <typename T>
Tensor<T> field_tensor(const DisplacementField& f) {
  Tensor<T> t(2, f.height(), f.width());
  for (std::size_t i = 0; i < f.size(); ++i) {
    t.plane(0)[i] = static_cast<T>(f.ux_plane()[i]);
    t.plane(1)[i] = static_cast<T>(f.uy_plane()[i]);
  }
  return t;
}

template <typename T>
FlowNet<T>::FlowNet(ModelConfig config, std::uint64_t seed)
    : config_(config), seed_(seed), rng_(seed) {
  config_.validate();
  const double relu_gain = std::sqrt(2.0);
  feature_encoder_ = make_encoder("fnet", config_.feature_dim);
  context_encoder_ = make_encoder("cnet", config_.hidden_dim + config_.context_dim);
  const int hd = config_.hidden_dim;
  const int motion = kMotionFeatures + 2;
  const int x_dim = config_.context_dim + motion;
  corr_in_ = make_conv("update.corr", config_.correlation_channels(), kCorrFeatures, 1, 1, relu_gain);
  flow_in_ = make_conv("update.flow", 2, kFlowFeatures, 3, 1, relu_gain);
  motion_ = make_conv("update.motion", kCorrFeatures + kFlowFeatures, kMotionFeatures, 3, 1, relu_gain);
  gate_z_ = make_conv("update.gru.z", hd + x_dim, hd, 1, 1, 1.0);
  gate_r_ = make_conv("update.gru.r", hd + x_dim, hd, 1, 1, 1.0);
  cand_h_ = make_conv("update.gru.qh", hd, hd, 3, 1, 1.0);
  cand_x_ = make_conv("update.gru.qx", x_dim, hd, 1, 1, 1.0);
  head1_ = make_conv("update.head1", hd, kHeadWidth, 3, 1, relu_gain);
  head2_ = make_conv("update.head2", kHeadWidth, 2, 3, 1, 0.1);
}

template <typename T>
Conv<T> FlowNet<T>::make_conv(const std::string& name, int in, int out, int kernel, int stride,
                              double gain) {
  Conv<T> c;
  c.in = in;
  c.out = out;
  c.kernel = kernel;
  c.stride = stride;
  const int fan_in = in * kernel * kernel;
  const double stddev = gain / std::sqrt(static_cast<double>(fan_in));
  std::normal_distribution<double> normal(0.0, stddev);
  Tensor<T> w(out, 1, fan_in);
  for (auto& v : w.data) v = static_cast<T>(normal(rng_));
  c.weight = ag::leaf(std::move(w), true);
  c.bias = ag::leaf(Tensor<T>(out, 1, 1), true);
  params_.push_back({name + ".weight", c.weight});
  params_.push_back({name + ".bias", c.bias});
  return c;
}

template <typename T>
typename FlowNet<T>::Encoder FlowNet<T>::make_encoder(const std::string& prefix, int out_channels) {
  const double g = std::sqrt(2.0);
  const int third_stride = config_.downsample_factor == 8 ? 2 : 1;
  Encoder e;
  e.c1 = make_conv(prefix + ".conv1", 1, kEncoderWidths[0], 5, 2, g);
  e.c2 = make_conv(prefix + ".conv2", kEncoderWidths[0], kEncoderWidths[1], 3, 2, g);
  e.c3 = make_conv(prefix + ".conv3", kEncoderWidths[1], kEncoderWidths[1], 3, 1, g);
  e.c4 = make_conv(prefix + ".conv4", kEncoderWidths[1], kEncoderWidths[2], 3, third_stride, g);
  e.c5 = make_conv(prefix + ".conv5", kEncoderWidths[2], kEncoderWidths[2], 3, 1, g);
  e.out = make_conv(prefix + ".out", kEncoderWidths[2], out_channels, 1, 1, 1.0);
  return e;
}

template <typename T>
std::size_t FlowNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var->value.size();
  return n;
}

template <typename T>
void FlowNet<T>::check_input(int height, int width) const {
  const int f = config_.downsample_factor;
  if (height % f != 0 || width % f != 0) {
    throw DimensionError("image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by the downsample factor " + std::to_string(f));
  }
  const int coarsest = 1 << (config_.pyramid_levels - 1);
  if (height / f < coarsest || width / f < coarsest) {
    throw DimensionError("image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is too small for " + std::to_string(config_.pyramid_levels) +
                         " correlation levels");
  }
}

template <typename T>
void FlowNet<T>::check_pair(int fh, int fw, int mh, int mw) const {
  if (fh != mh || fw != mw) {
    throw DimensionMismatch("fixed " + std::to_string(fh) + "x" + std::to_string(fw) +
                            " and moving " + std::to_string(mh) + "x" + std::to_string(mw) +
                            " differ");
  }
  check_input(fh, fw);
}

template <typename T>
ag::Var<T> FlowNet<T>::run_encoder(const Encoder& e, const ag::Var<T>& image,
                                   bool normalize) const {
  // Binomial low-pass ahead of every strided conv: without it the speckle
  // aliases at the stride and 1/8-resolution features decorrelate under
  // sub-cell shifts, leaving the correlation volume without usable signal.
  static constexpr std::array<T, 5> kBinomial{T(1) / 16, T(4) / 16, T(6) / 16, T(4) / 16,
                                              T(1) / 16};
  auto conv = [](const Conv<T>& c, const ag::Var<T>& v) {
    return c.stride > 1 ? c(ag::smooth<T>(v, kBinomial)) : c(v);
  };
  // Feature maps are standardized per channel so correlation contrast comes
  // from spatial structure rather than from shared channel offsets.
  auto act = [normalize](const ag::Var<T>& v) {
    return ag::relu(normalize ? ag::instance_norm(v) : v);
  };
  // Map [0,1] intensities to [-1,1].
  auto x = ag::add_scalar(ag::scale(image, T(2)), T(-1));
  x = act(conv(e.c1, x));
  x = act(conv(e.c2, x));
  x = act(conv(e.c3, x));
  x = act(conv(e.c4, x));
  x = act(conv(e.c5, x));
  return e.out(x);
}

template <typename T>
ag::Var<T> FlowNet<T>::encode(const ag::Var<T>& image, EncoderKind which) const {
  check_input(image->value.h, image->value.w);
  return which == EncoderKind::feature ? run_encoder(feature_encoder_, image, true)
                                       : run_encoder(context_encoder_, image, false);
}

template <typename T>
Tensor<T> FlowNet<T>::encode(const Image& image, EncoderKind which) const {
  ag::NoGradGuard guard;
  return encode(ag::constant(to_tensor<T>(image)), which)->value;
}

template <typename T>
std::vector<ag::Var<T>> FlowNet<T>::correlation_pyramid(const ag::Var<T>& f_fixed,
                                                        const ag::Var<T>& f_moving) const {
  std::vector<ag::Var<T>> levels;
  levels.push_back(ag::correlation(f_fixed, f_moving));
  for (int l = 1; l < config_.pyramid_levels; ++l) levels.push_back(ag::avg_pool2(levels.back()));
  return levels;
}

template <typename T>
ag::Var<T> FlowNet<T>::lookup(const std::vector<ag::Var<T>>& pyramid,
                              const ag::Var<T>& flow) const {
  const int h = flow->value.h;
  const int w = flow->value.w;
  Tensor<T> grid(2, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      grid.at(0, y, x) = T(x);
      grid.at(1, y, x) = T(y);
    }
  }
  auto coords = ag::add(ag::constant(std::move(grid)), flow);
  return ag::correlation_lookup<T>(pyramid, coords, config_.lookup_radius,
                                   config_.detach_iterates);
}

template <typename T>
std::pair<ag::Var<T>, ag::Var<T>> FlowNet<T>::update_step(const ag::Var<T>& hidden,
                                                          const ag::Var<T>& context,
                                                          const ag::Var<T>& correlation_features,
                                                          const ag::Var<T>& flow) const {
  auto cor = ag::relu(corr_in_(correlation_features));
  auto flo = ag::relu(flow_in_(flow));
  const ag::Var<T> cf[] = {cor, flo};
  auto mot = ag::relu(motion_(ag::concat<T>(cf)));
  const ag::Var<T> motion_parts[] = {mot, flow};
  auto motion = ag::concat<T>(motion_parts);
  const ag::Var<T> x_parts[] = {context, motion};
  auto x = ag::concat<T>(x_parts);
  const ag::Var<T> hx_parts[] = {hidden, x};
  auto hx = ag::concat<T>(hx_parts);

  auto z = ag::sigmoid(gate_z_(hx));
  auto r = ag::sigmoid(gate_r_(hx));
  auto q = ag::tanh(ag::add(cand_h_(ag::mul(r, hidden)), cand_x_(x)));
  auto next = ag::add(hidden, ag::mul(z, ag::sub(q, hidden)));

  auto delta = head2_(ag::relu(head1_(next)));
  return {next, delta};
}

template <typename T>
typename FlowNet<T>::Forward FlowNet<T>::forward(const ag::Var<T>& fixed,
                                                 const ag::Var<T>& moving) const {
  check_pair(fixed->value.h, fixed->value.w, moving->value.h, moving->value.w);
  auto f1 = run_encoder(feature_encoder_, fixed, true);
  auto f2 = run_encoder(feature_encoder_, moving, true);
  auto pyramid = correlation_pyramid(f1, f2);

  auto ctx = run_encoder(context_encoder_, fixed, false);
  const int hd = config_.hidden_dim;
  auto hidden = ag::tanh(ag::slice_channels(ctx, 0, hd));
  auto context = ag::relu(ag::slice_channels(ctx, hd, hd + config_.context_dim));

  Forward out;
  auto flow = ag::constant(Tensor<T>(2, f1->value.h, f1->value.w));
  for (int k = 0; k < config_.iterations; ++k) {
    auto flow_in = config_.detach_iterates ? ag::detach(flow) : flow;
    auto corr = lookup(pyramid, flow_in);
    auto [next_hidden, delta] = update_step(hidden, context, corr, flow_in);
    hidden = next_hidden;
    flow = ag::add(flow_in, delta);
    out.deltas.push_back(delta);
    out.iterates.push_back(ag::upsample_flow(flow, config_.downsample_factor));
  }
  out.final_low_res = flow;
  return out;
}

template <typename T>
FlowPrediction FlowNet<T>::predict_all(const Image& fixed, const Image& moving) const {
  check_pair(fixed.height(), fixed.width(), moving.height(), moving.width());
  ag::NoGradGuard guard;
  auto result = forward(ag::constant(to_tensor<T>(fixed)), ag::constant(to_tensor<T>(moving)));
  FlowPrediction p;
  for (const auto& it : result.iterates) p.iterates.push_back(to_field(it->value));
  return p;
}

template <typename T>
DisplacementField FlowNet<T>::predict(const Image& fixed, const Image& moving) const {
  check_pair(fixed.height(), fixed.width(), moving.height(), moving.width());
  ag::NoGradGuard guard;
  auto result = forward(ag::constant(to_tensor<T>(fixed)), ag::constant(to_tensor<T>(moving)));
  return to_field(result.iterates.back()->value);
}

template <typename T>
void FlowNet<T>::zero_flow_head() {
  std::fill(head2_.weight->value.data.begin(), head2_.weight->value.data.end(), T(0));
  std::fill(head2_.bias->value.data.begin(), head2_.bias->value.data.end(), T(0));
}

void to_json(nlohmann::json& j, const ThroughputReport& r) {
  j = nlohmann::json{{"height", r.height},
                     {"width", r.width},
                     {"iterations", r.iterations},
                     {"trials", r.trials},
                     {"median_seconds", r.median_seconds},
                     {"fps", r.fps},
                     {"trial_seconds", r.trial_seconds}};
}

ThroughputReport throughput_report(const FlowNet<float>& model, int height, int width,
                                   int trials) {
  if (trials < 5) throw ArgumentError("throughput_report needs at least 5 trials");
  model.check_input(height, width);
  std::mt19937 rng(1234);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  auto random_image = [&] {
    std::vector<float> px(static_cast<std::size_t>(height) * width);
    for (auto& v : px) v = uni(rng);
    return Image(height, width, std::move(px));
  };
  const Image a = random_image();
  const Image b = random_image();
  model.predict(a, b);  // warm-up
  ThroughputReport r;
  r.height = height;
  r.width = width;
  r.iterations = model.config().iterations;
  r.trials = trials;
  for (int t = 0; t < trials; ++t) {
    const auto start = std::chrono::steady_clock::now();
    const auto field = model.predict(a, b);
    const auto stop = std::chrono::steady_clock::now();
    r.trial_seconds.push_back(std::chrono::duration<double>(stop - start).count());
    (void)field;
  }
  auto sorted = r.trial_seconds;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.median_seconds = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  r.fps = r.median_seconds > 0 ? 1.0 / r.median_seconds : 0.0;
  return r;
}

template class FlowNet<float>;
template class FlowNet<double>;
template Tensor<float> to_tensor<float>(const Image&);
template Tensor<double> to_tensor<double>(const Image&);
template DisplacementField to_field<float>(const Tensor<float>&);
template DisplacementField to_field<double>(const Tensor<double>&);
template Tensor<float> field_tensor<float>(const DisplacementField&);
template Tensor<double> field_tensor<double>(const DisplacementField&);

}  // namespace uraft
