#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"
#include "uraft/image.hpp"

namespace uraft {

struct Inclusion {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;
  double contrast = 1.0;  // scatterer amplitude multiplier inside the disc
};

struct PhantomSpec {
  int size = 128;
  double speckle_density = 0.6;  // scatterers per pixel
  double psf_sigma_axial = 1.0;  // rows
  double psf_sigma_lateral = 2.0;  // columns
  std::vector<Inclusion> inclusions;
  std::uint64_t seed = 0;

  /// Throws ArgumentError when size < 32 or density <= 0.
  void validate() const;
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

/// Scatterers convolved with an anisotropic Gaussian PSF, envelope-detected,
/// log-compressed and min-max normalized.
Image generate_speckle(const PhantomSpec& spec);

enum class DeformationKind { gaussian_bump, respiratory };

struct DeformationSpec {
  DeformationKind kind = DeformationKind::gaussian_bump;
  double center_x = 64.0;
  double center_y = 64.0;
  double sigma = 24.0;
  // Bump peak vector in pixels; for the respiratory kind this is the base
  // field's unit direction (vertical dominant).
  double peak_x = 0.0;
  double peak_y = 1.0;
  double amplitude = 3.0;  // respiratory only, pixels
  double frequency = 0.3;  // respiratory only, Hz
  double phase = 0.0;      // respiratory only, radians

  /// Throws ArgumentError for sigma < 4 or a peak (times amplitude) larger
  /// than 0.15 * min(height, width).
  void validate(int height, int width) const;
};

void to_json(nlohmann::json& j, const DeformationSpec& s);
void from_json(const nlohmann::json& j, DeformationSpec& s);

/// gaussian_bump: u(p) = a * exp(-|p - c|^2 / (2 sigma^2)).
/// respiratory:   u(p, t) = A * sin(2 pi f t + phase) * bump(p).
/// Throws ArgumentError when t is missing for the respiratory kind.
DisplacementField make_field(const DeformationSpec& spec, int height, int width,
                             std::optional<double> t = std::nullopt);

struct SyntheticSample {
  Image fixed;
  Image moving;
  DisplacementField field_gt;  // warp(moving, field_gt).image == fixed
};

/// moving = template, fixed = warp(template, field).
SyntheticSample render_pair(const Image& template_image, const DisplacementField& field);

struct RespiratorySequence {
  VideoSequence sequence;
  /// Generating field of every frame: frame_i = warp(template, fields[i]).
  std::vector<DisplacementField> fields;
  /// Field registering frame 0 to frame i (frame_0(p) ~ frame_i(p + v_i(p))),
  /// obtained by numerically inverting the generating motion.
  std::vector<DisplacementField> registration;
};

RespiratorySequence make_respiratory_sequence(const PhantomSpec& phantom,
                                              const DeformationSpec& motion, double fps,
                                              double duration_s);

struct PairCorpusSpec {
  int count = 20;
  int size = 128;
  double max_displacement = 5.0;
  double min_displacement = 2.5;
  double min_sigma = 20.0;
  double max_sigma = 40.0;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const PairCorpusSpec& s);

/// Random speckle templates deformed by random Gaussian bumps. Each sample's
/// phantom and field are drawn from a generator seeded with (seed, index).
std::vector<SyntheticSample> make_pair_corpus(const PairCorpusSpec& spec);

/// Writes pair_NNNN/{fixed,moving}.png + field_gt.udf1 and manifest.json.
void write_pair_corpus(const std::vector<SyntheticSample>& samples, const nlohmann::json& manifest,
                       const std::filesystem::path& dir);
/// Reads the layout written by write_pair_corpus.
std::vector<SyntheticSample> read_pair_corpus(const std::filesystem::path& dir);

/// Writes frames/frame_NNNNN.png, fields/field_NNNNN.udf1 (generating fields),
/// registration/reg_NNNNN.udf1 and manifest.json.
void write_sequence(const RespiratorySequence& seq, const nlohmann::json& manifest,
                    const std::filesystem::path& dir);

}  // namespace uraft
