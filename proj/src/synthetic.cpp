#include "uraft/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>

#include "uraft/error.hpp"
#include "uraft/io.hpp"
#include "uraft/warp.hpp"

namespace uraft {

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[i + radius];
  }
  for (double& v : k) v /= total;
  return k;
}

// Bump value at a point, in double precision.
std::pair<double, double> bump_at(const DeformationSpec& s, double x, double y) {
  const double dx = x - s.center_x, dy = y - s.center_y;
  const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * s.sigma * s.sigma));
  return {s.peak_x * g, s.peak_y * g};
}

double respiratory_scale(const DeformationSpec& s, double t) {
  return s.amplitude * std::sin(2.0 * std::numbers::pi * s.frequency * t + s.phase);
}

// Per-sample generator seed: SplitMix64 finalizer of (seed, index).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::string numbered(const char* prefix, std::size_t i, int digits, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*zu%s", prefix, digits, i, ext);
  return buf;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_atomically(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

}  // namespace

void PhantomSpec::validate() const {
  if (size < 32) throw ArgumentError("phantom size must be >= 32, got " + std::to_string(size));
  if (!(speckle_density > 0.0)) throw ArgumentError("speckle density must be positive");
  if (!(psf_sigma_axial > 0.0) || !(psf_sigma_lateral > 0.0)) {
    throw ArgumentError("PSF widths must be positive");
  }
  for (const auto& inc : inclusions) {
    if (!(inc.radius > 0.0) || !(inc.contrast >= 0.0)) {
      throw ArgumentError("inclusion radius must be positive and contrast non-negative");
    }
  }
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  auto inc = nlohmann::json::array();
  for (const auto& i : s.inclusions) {
    inc.push_back({{"cx", i.cx}, {"cy", i.cy}, {"radius", i.radius}, {"contrast", i.contrast}});
  }
  j = nlohmann::json{{"size", s.size},
                     {"speckle_density", s.speckle_density},
                     {"psf_sigma_axial", s.psf_sigma_axial},
                     {"psf_sigma_lateral", s.psf_sigma_lateral},
                     {"inclusions", inc},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  PhantomSpec d;
  for (const auto& [key, value] : j.items()) {
    if (key != "size" && key != "speckle_density" && key != "psf_sigma_axial" &&
        key != "psf_sigma_lateral" && key != "inclusions" && key != "seed") {
      throw ArgumentError("unknown phantom key: " + key);
    }
  }
  s.size = j.value("size", d.size);
  s.speckle_density = j.value("speckle_density", d.speckle_density);
  s.psf_sigma_axial = j.value("psf_sigma_axial", d.psf_sigma_axial);
  s.psf_sigma_lateral = j.value("psf_sigma_lateral", d.psf_sigma_lateral);
  s.seed = j.value("seed", d.seed);
  s.inclusions.clear();
  if (j.contains("inclusions")) {
    for (const auto& i : j.at("inclusions")) {
      s.inclusions.push_back({i.at("cx").get<double>(), i.at("cy").get<double>(),
                              i.at("radius").get<double>(), i.value("contrast", 1.0)});
    }
  }
  s.validate();
}

Image generate_speckle(const PhantomSpec& spec) {
  spec.validate();
  const auto ky = gaussian_kernel(spec.psf_sigma_axial);
  const auto kx = gaussian_kernel(spec.psf_sigma_lateral);
  const int ry = static_cast<int>(ky.size() / 2), rx = static_cast<int>(kx.size() / 2);
  // Scatterers live on a margin-padded grid so the PSF sees no edge.
  const int n = spec.size;
  const int ph = n + 2 * ry, pw = n + 2 * rx;

  std::mt19937_64 rng(spec.seed);
  std::poisson_distribution<int> count(spec.speckle_density);
  std::normal_distribution<double> amplitude(0.0, 1.0);
  std::vector<double> scatter(static_cast<std::size_t>(ph) * pw, 0.0);
  for (int y = 0; y < ph; ++y) {
    for (int x = 0; x < pw; ++x) {
      double gain = 1.0;
      for (const auto& inc : spec.inclusions) {
        const double dx = x - rx - inc.cx, dy = y - ry - inc.cy;
        if (dx * dx + dy * dy <= inc.radius * inc.radius) gain *= inc.contrast;
      }
      const int k = count(rng);
      double acc = 0.0;
      for (int s = 0; s < k; ++s) acc += amplitude(rng);
      scatter[static_cast<std::size_t>(y) * pw + x] = gain * acc;
    }
  }

  // Lateral (columns) then axial (rows) PSF, valid region only.
  std::vector<double> rows(static_cast<std::size_t>(ph) * n, 0.0);
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < n; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < kx.size(); ++t) acc += kx[t] * scatter[y * pw + x + t];
      rows[static_cast<std::size_t>(y) * n + x] = acc;
    }
  std::vector<double> envelope(static_cast<std::size_t>(n) * n, 0.0);
  double mean = 0.0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < ky.size(); ++t) acc += ky[t] * rows[(y + t) * n + x];
      envelope[static_cast<std::size_t>(y) * n + x] = std::abs(acc);
      mean += std::abs(acc);
    }
  mean /= double(envelope.size());
  // Log compression relative to the mean envelope.
  const double ref = mean > 0.0 ? mean : 1.0;
  for (double& v : envelope) v = std::log1p(4.0 * v / ref);
  return normalize_image(envelope, n, n);
}

void DeformationSpec::validate(int height, int width) const {
  if (!(sigma >= 4.0)) throw ArgumentError("deformation sigma must be >= 4 pixels");
  const double peak = std::hypot(peak_x, peak_y) *
                      (kind == DeformationKind::respiratory ? std::abs(amplitude) : 1.0);
  const double limit = 0.15 * std::min(height, width);
  if (peak > limit) {
    throw ArgumentError("peak displacement " + std::to_string(peak) + " px exceeds 0.15 x size (" +
                        std::to_string(limit) + " px)");
  }
  if (kind == DeformationKind::respiratory) {
    if (std::abs(peak_y) < std::abs(peak_x)) {
      throw ArgumentError("respiratory base field must be vertical dominant");
    }
    if (!(frequency >= 0.0)) throw ArgumentError("frequency must be non-negative");
  }
}

void to_json(nlohmann::json& j, const DeformationSpec& s) {
  j = nlohmann::json{
      {"kind", s.kind == DeformationKind::gaussian_bump ? "gaussian_bump" : "respiratory"},
      {"center_x", s.center_x},
      {"center_y", s.center_y},
      {"sigma", s.sigma},
      {"peak_x", s.peak_x},
      {"peak_y", s.peak_y},
      {"amplitude", s.amplitude},
      {"frequency", s.frequency},
      {"phase", s.phase}};
}

void from_json(const nlohmann::json& j, DeformationSpec& s) {
  static const char* known[] = {"kind",   "center_x",  "center_y",  "sigma", "peak_x",
                                "peak_y", "amplitude", "frequency", "phase"};
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(std::begin(known), std::end(known), [&](const char* k) { return key == k; })) {
      throw ArgumentError("unknown deformation key: " + key);
    }
  }
  DeformationSpec d;
  const std::string kind = j.value("kind", std::string("gaussian_bump"));
  if (kind == "gaussian_bump") {
    s.kind = DeformationKind::gaussian_bump;
  } else if (kind == "respiratory") {
    s.kind = DeformationKind::respiratory;
  } else {
    throw ArgumentError("unknown deformation kind: " + kind);
  }
  s.center_x = j.value("center_x", d.center_x);
  s.center_y = j.value("center_y", d.center_y);
  s.sigma = j.value("sigma", d.sigma);
  s.peak_x = j.value("peak_x", d.peak_x);
  s.peak_y = j.value("peak_y", d.peak_y);
  s.amplitude = j.value("amplitude", d.amplitude);
  s.frequency = j.value("frequency", d.frequency);
  s.phase = j.value("phase", d.phase);
}

DisplacementField make_field(const DeformationSpec& spec, int height, int width,
                             std::optional<double> t) {
  spec.validate(height, width);
  double scale = 1.0;
  if (spec.kind == DeformationKind::respiratory) {
    if (!t) throw ArgumentError("respiratory field needs a time t");
    scale = respiratory_scale(spec, *t);
  }
  DisplacementField field(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const auto [bx, by] = bump_at(spec, x, y);
      field.set(x, y, static_cast<float>(scale * bx), static_cast<float>(scale * by));
    }
  }
  return field;
}

SyntheticSample render_pair(const Image& template_image, const DisplacementField& field) {
  auto fixed = warp(template_image, field).image;
  return {std::move(fixed), template_image, field};
}

RespiratorySequence make_respiratory_sequence(const PhantomSpec& phantom,
                                              const DeformationSpec& motion, double fps,
                                              double duration_s) {
  if (motion.kind != DeformationKind::respiratory) {
    throw ArgumentError("respiratory sequence needs a respiratory deformation");
  }
  if (!(fps > 0.0) || !(duration_s > 0.0)) throw ArgumentError("fps and duration must be positive");
  const auto count = static_cast<std::size_t>(std::llround(fps * duration_s));
  if (count < 2) throw InsufficientFrames("sequence would have fewer than 2 frames");
  const Image template_image = generate_speckle(phantom);
  const int n = phantom.size;

  std::vector<Image> frames;
  std::vector<DisplacementField> fields, registration;
  const double s0 = respiratory_scale(motion, 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    const double t = double(i) / fps;
    fields.push_back(make_field(motion, n, n, t));
    frames.push_back(warp(template_image, fields.back()).image);

    // v(p) = s0 B(p) - s_i B(p + v) solved by fixed-point iteration; the map
    // is a contraction because |grad B| * A is far below one.
    const double si = respiratory_scale(motion, t);
    DisplacementField v(n, n);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const auto [b0x, b0y] = bump_at(motion, x, y);
        double vx = 0.0, vy = 0.0;
        for (int it = 0; it < 60; ++it) {
          const auto [bx, by] = bump_at(motion, x + vx, y + vy);
          const double nx = s0 * b0x - si * bx, ny = s0 * b0y - si * by;
          const bool done = std::abs(nx - vx) + std::abs(ny - vy) < 1e-12;
          vx = nx;
          vy = ny;
          if (done) break;
        }
        v.set(x, y, static_cast<float>(vx), static_cast<float>(vy));
      }
    }
    registration.push_back(std::move(v));
  }
  return {VideoSequence(std::move(frames), fps), std::move(fields), std::move(registration)};
}

void to_json(nlohmann::json& j, const PairCorpusSpec& s) {
  j = nlohmann::json{{"count", s.count},
                     {"size", s.size},
                     {"max_displacement", s.max_displacement},
                     {"min_displacement", s.min_displacement},
                     {"min_sigma", s.min_sigma},
                     {"max_sigma", s.max_sigma},
                     {"seed", s.seed}};
}

std::vector<SyntheticSample> make_pair_corpus(const PairCorpusSpec& spec) {
  if (spec.count < 1) throw ArgumentError("pair count must be >= 1");
  if (!(spec.max_displacement > 0.0) || spec.min_displacement > spec.max_displacement) {
    throw ArgumentError("displacement range is empty");
  }
  if (spec.min_sigma > spec.max_sigma) throw ArgumentError("sigma range is empty");
  std::vector<SyntheticSample> out;
  out.reserve(spec.count);
  for (int i = 0; i < spec.count; ++i) {
    std::mt19937_64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    PhantomSpec phantom;
    phantom.size = spec.size;
    phantom.seed = rng();
    const Image template_image = generate_speckle(phantom);

    DeformationSpec d;
    d.kind = DeformationKind::gaussian_bump;
    d.center_x = spec.size * (0.25 + 0.5 * unit(rng));
    d.center_y = spec.size * (0.25 + 0.5 * unit(rng));
    d.sigma = spec.min_sigma + (spec.max_sigma - spec.min_sigma) * unit(rng);
    const double magnitude =
        spec.min_displacement + (spec.max_displacement - spec.min_displacement) * unit(rng);
    const double angle = 2.0 * std::numbers::pi * unit(rng);
    d.peak_x = magnitude * std::cos(angle);
    d.peak_y = magnitude * std::sin(angle);
    out.push_back(render_pair(template_image, make_field(d, spec.size, spec.size)));
  }
  return out;
}

void write_pair_corpus(const std::vector<SyntheticSample>& samples, const nlohmann::json& manifest,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto sub = dir / numbered("pair_", i, 4, "");
    std::filesystem::create_directories(sub);
    write_png(samples[i].fixed, sub / "fixed.png");
    write_png(samples[i].moving, sub / "moving.png");
    write_flow(samples[i].field_gt, sub / "field_gt.udf1");
  }
  write_json(dir / "manifest.json", manifest);
}

std::vector<SyntheticSample> read_pair_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw ArgumentError("corpus directory does not exist: " + dir.string());
  }
  std::vector<std::filesystem::path> subs;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory() && std::filesystem::exists(e.path() / "fixed.png")) subs.push_back(e.path());
  }
  std::sort(subs.begin(), subs.end());
  std::vector<SyntheticSample> out;
  for (const auto& s : subs) {
    SyntheticSample sample{read_png_levels(s / "fixed.png"), read_png_levels(s / "moving.png"), {}};
    if (std::filesystem::exists(s / "field_gt.udf1")) sample.field_gt = read_flow(s / "field_gt.udf1");
    out.push_back(std::move(sample));
  }
  return out;
}

void write_sequence(const RespiratorySequence& seq, const nlohmann::json& manifest,
                    const std::filesystem::path& dir) {
  const auto frames = dir / "frames", fields = dir / "fields", reg = dir / "registration";
  std::filesystem::create_directories(frames);
  std::filesystem::create_directories(fields);
  std::filesystem::create_directories(reg);
  for (std::size_t i = 0; i < seq.sequence.size(); ++i) {
    write_png(seq.sequence[i], frames / numbered("frame_", i, 5, ".png"));
    write_flow(seq.fields[i], fields / numbered("field_", i, 5, ".udf1"));
    write_flow(seq.registration[i], reg / numbered("reg_", i, 5, ".udf1"));
  }
  write_json(dir / "manifest.json", manifest);
}

}  // namespace uraft
