#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "uraft/flow_net.hpp"
#include "uraft/image.hpp"

namespace uraft {

/// d[i][y][x] = |u_{f,m_i}(x, y)| for frames i = 1..N-1 of a sequence whose
/// frame 0 is the fixed image.
class DisplacementTrack {
 public:
  DisplacementTrack(int height, int width, double fps) : height_(height), width_(width), fps_(fps) {}

  int height() const { return height_; }
  int width() const { return width_; }
  double fps() const { return fps_; }
  /// Number of tracked frames, i.e. sequence length - 1.
  std::size_t frame_count() const { return magnitudes_.size(); }

  /// Appends the next frame's field; its magnitudes are stored and, when
  /// `retain` is set, the field itself too.
  void push(const DisplacementField& field, bool retain);

  /// Displacement at sequence frame `frame` (0 is the fixed frame, always 0).
  double d(std::size_t frame, PixelLocation p) const;
  const std::vector<float>& magnitudes(std::size_t frame) const { return magnitudes_.at(frame - 1); }
  const std::vector<DisplacementField>& fields() const { return fields_; }

  /// Mean over every tracked frame and pixel.
  double mean() const;
  /// Mean over pixels for each tracked frame (frames 1..N-1).
  std::vector<double> per_frame_mean() const;
  /// d at one pixel over frames 1..N-1.
  std::vector<double> trace(PixelLocation p) const;
  /// Mean of d over the inclusive box [x0,x1]x[y0,y1] for frames 1..N-1.
  std::vector<double> region_trace(int x0, int y0, int x1, int y1) const;

 private:
  int height_;
  int width_;
  double fps_;
  std::vector<std::vector<float>> magnitudes_;
  std::vector<DisplacementField> fields_;
};

/// Registers frame 0 against every later frame. Throws DimensionMismatch if
/// the model cannot take the frames.
DisplacementTrack track_sequence(const FlowPredictor& model, const VideoSequence& seq,
                                 bool retain_fields = false);
/// Track from known fields of frames 1..N-1.
DisplacementTrack track_from_fields(std::span<const DisplacementField> fields, double fps);

struct Stabilization {
  VideoSequence compensated;
  DisplacementTrack before;  // fields retained
};

/// compensated_0 = frame_0, compensated_i = warp(frame_i, u_{f,m_i}).
Stabilization stabilize_sequence(const FlowPredictor& model, const VideoSequence& seq);
/// Same with supplied fields for frames 1..N-1 instead of model predictions.
Stabilization stabilize_sequence(const VideoSequence& seq, std::span<const DisplacementField> fields);

struct CompensationReport {
  double avg_before = 0.0;
  double avg_after = 0.0;
  std::optional<double> reduction_percent;  // null when avg_before is too small
  std::vector<double> per_frame_before;
  std::vector<double> per_frame_after;
  double fps = 0.0;
  std::string model_id;
};

void to_json(nlohmann::json& j, const CompensationReport& r);

/// 100 * (1 - after / before), or nullopt when before <= threshold.
std::optional<double> reduction_percent(double avg_before, double avg_after, double threshold = 0.0);

/// Before = track of `seq`; after = track re-run on `compensated` (whose frame
/// 0 is the original frame 0).
CompensationReport compensation_report(const FlowPredictor& model, const VideoSequence& seq,
                                       const VideoSequence& compensated,
                                       double reduction_threshold = 0.0);
CompensationReport compensation_report(const DisplacementTrack& before,
                                       const DisplacementTrack& after, std::string model_id,
                                       double reduction_threshold = 0.0);

/// Equal-weight pooling across datasets of per-dataset average displacements.
double pooled_reduction_percent(std::span<const double> before, std::span<const double> after);

struct Band {
  double low = 0.05;
  double high = 1.5;
};

struct SpectrumEstimate {
  double dominant_frequency = 0.0;  // Hz
  double rate_bpm = 0.0;
  double frequency_resolution = 0.0;  // fps / N
  double peak_power = 0.0;
  double median_power = 0.0;
  Band band;
  std::vector<std::pair<double, double>> spectrum;  // (Hz, power), every bin up to Nyquist
};

void to_json(nlohmann::json& j, const SpectrumEstimate& s);

/// Mean removal, Hann window, FFT power spectrum, peak search inside `band`.
/// Throws InsufficientData (N < 64), ArgumentError (fps <= 2 * band.high or
/// an empty band) and NoDominantPeak (flat trace or peak < peak_ratio x the
/// in-band median power).
SpectrumEstimate estimate_rate(std::span<const double> trace, double fps, Band band = {},
                               double peak_ratio = 3.0);

/// Rows (frame_index, time_s, x, y, d_pixels) for frames 1..N-1 at each pixel.
void write_track_csv(const DisplacementTrack& track, std::span<const PixelLocation> pixels,
                     const std::filesystem::path& path);

struct TrackCsv {
  std::vector<PixelLocation> pixels;
  std::vector<std::vector<double>> traces;  // per pixel, ordered by frame index
  std::vector<double> times;
};

/// Reads the CSV written by write_track_csv. Throws FormatError.
TrackCsv read_track_csv(const std::filesystem::path& path);

}  // namespace uraft
