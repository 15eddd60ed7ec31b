#include "uraft/compensation.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "uraft/error.hpp"
#include "uraft/io.hpp"
#include "uraft/warp.hpp"

namespace uraft {

void DisplacementTrack::push(const DisplacementField& field, bool retain) {
  if (field.height() != height_ || field.width() != width_) {
    throw DimensionMismatch("track field size differs from the sequence");
  }
  std::vector<float> m(field.size());
  const auto ux = field.ux_plane();
  const auto uy = field.uy_plane();
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = static_cast<float>(std::hypot(double(ux[i]), double(uy[i])));
  }
  magnitudes_.push_back(std::move(m));
  if (retain) fields_.push_back(field);
}

double DisplacementTrack::d(std::size_t frame, PixelLocation p) const {
  if (p.x < 0 || p.y < 0 || p.x >= width_ || p.y >= height_) {
    throw ArgumentError("pixel outside the track");
  }
  if (frame == 0) return 0.0;
  return magnitudes_.at(frame - 1)[static_cast<std::size_t>(p.y) * width_ + p.x];
}

double DisplacementTrack::mean() const {
  if (magnitudes_.empty()) return 0.0;
  double total = 0.0;
  for (double m : per_frame_mean()) total += m;
  return total / double(magnitudes_.size());
}

std::vector<double> DisplacementTrack::per_frame_mean() const {
  std::vector<double> out;
  for (const auto& frame : magnitudes_) {
    double s = 0.0;
    for (float v : frame) s += v;
    out.push_back(s / double(frame.size()));
  }
  return out;
}

std::vector<double> DisplacementTrack::trace(PixelLocation p) const {
  return region_trace(p.x, p.y, p.x, p.y);
}

std::vector<double> DisplacementTrack::region_trace(int x0, int y0, int x1, int y1) const {
  if (x0 > x1 || y0 > y1 || x0 < 0 || y0 < 0 || x1 >= width_ || y1 >= height_) {
    throw ArgumentError("region outside the track");
  }
  std::vector<double> out;
  const double count = double(x1 - x0 + 1) * (y1 - y0 + 1);
  for (const auto& frame : magnitudes_) {
    double s = 0.0;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) s += frame[static_cast<std::size_t>(y) * width_ + x];
    out.push_back(s / count);
  }
  return out;
}

DisplacementTrack track_sequence(const FlowPredictor& model, const VideoSequence& seq,
                                 bool retain_fields) {
  DisplacementTrack track(seq.height(), seq.width(), seq.fps());
  for (std::size_t i = 1; i < seq.size(); ++i) {
    track.push(model.predict(seq[0], seq[i]), retain_fields);
  }
  return track;
}

DisplacementTrack track_from_fields(std::span<const DisplacementField> fields, double fps) {
  if (fields.empty()) throw InsufficientFrames("no fields to track");
  DisplacementTrack track(fields[0].height(), fields[0].width(), fps);
  for (const auto& f : fields) track.push(f, true);
  return track;
}

Stabilization stabilize_sequence(const FlowPredictor& model, const VideoSequence& seq) {
  auto before = track_sequence(model, seq, true);
  std::vector<Image> frames{seq[0]};
  for (std::size_t i = 1; i < seq.size(); ++i) {
    frames.push_back(warp(seq[i], before.fields()[i - 1]).image);
  }
  return {VideoSequence(std::move(frames), seq.fps()), std::move(before)};
}

Stabilization stabilize_sequence(const VideoSequence& seq,
                                 std::span<const DisplacementField> fields) {
  if (fields.size() + 1 != seq.size()) {
    throw ArgumentError("need one field per frame after the first");
  }
  auto before = track_from_fields(fields, seq.fps());
  std::vector<Image> frames{seq[0]};
  for (std::size_t i = 1; i < seq.size(); ++i) frames.push_back(warp(seq[i], fields[i - 1]).image);
  return {VideoSequence(std::move(frames), seq.fps()), std::move(before)};
}

void to_json(nlohmann::json& j, const CompensationReport& r) {
  j = nlohmann::json{{"avg_before", r.avg_before},
                     {"avg_after", r.avg_after},
                     {"reduction_percent", nullptr},
                     {"per_frame_before", r.per_frame_before},
                     {"per_frame_after", r.per_frame_after},
                     {"fps", r.fps},
                     {"model_id", r.model_id}};
  if (r.reduction_percent) j["reduction_percent"] = *r.reduction_percent;
}

std::optional<double> reduction_percent(double avg_before, double avg_after, double threshold) {
  if (!(avg_before > threshold) || !(avg_before > 0.0)) return std::nullopt;
  return 100.0 * (1.0 - avg_after / avg_before);
}

CompensationReport compensation_report(const DisplacementTrack& before,
                                       const DisplacementTrack& after, std::string model_id,
                                       double reduction_threshold) {
  if (before.frame_count() != after.frame_count() || before.height() != after.height() ||
      before.width() != after.width()) {
    throw DimensionMismatch("before and after tracks differ in shape");
  }
  CompensationReport r;
  r.avg_before = before.mean();
  r.avg_after = after.mean();
  r.reduction_percent = reduction_percent(r.avg_before, r.avg_after, reduction_threshold);
  r.per_frame_before = before.per_frame_mean();
  r.per_frame_after = after.per_frame_mean();
  r.fps = before.fps();
  r.model_id = std::move(model_id);
  return r;
}

CompensationReport compensation_report(const FlowPredictor& model, const VideoSequence& seq,
                                       const VideoSequence& compensated,
                                       double reduction_threshold) {
  if (seq.size() != compensated.size() || seq.height() != compensated.height() ||
      seq.width() != compensated.width()) {
    throw DimensionMismatch("compensated sequence differs from the original in shape");
  }
  return compensation_report(track_sequence(model, seq), track_sequence(model, compensated),
                             model.id(), reduction_threshold);
}

double pooled_reduction_percent(std::span<const double> before, std::span<const double> after) {
  if (before.size() != after.size() || before.empty()) {
    throw ArgumentError("pooling needs matching, non-empty before/after lists");
  }
  double b = 0.0, a = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    b += before[i];
    a += after[i];
  }
  const auto r = reduction_percent(b / double(before.size()), a / double(after.size()));
  if (!r) throw ArgumentError("pooled before-average must be positive");
  return *r;
}

void to_json(nlohmann::json& j, const SpectrumEstimate& s) {
  auto spectrum = nlohmann::json::array();
  for (const auto& [f, p] : s.spectrum) spectrum.push_back({f, p});
  j = nlohmann::json{{"dominant_frequency_hz", s.dominant_frequency},
                     {"rate_bpm", s.rate_bpm},
                     {"frequency_resolution_hz", s.frequency_resolution},
                     {"peak_power", s.peak_power},
                     {"median_power", s.median_power},
                     {"band_hz", {s.band.low, s.band.high}},
                     {"spectrum", spectrum}};
}

SpectrumEstimate estimate_rate(std::span<const double> trace, double fps, Band band,
                               double peak_ratio) {
  const std::size_t n = trace.size();
  if (n < 64) {
    throw InsufficientData("rate estimation needs at least 64 samples, got " + std::to_string(n));
  }
  if (!(band.low >= 0.0) || !(band.high > band.low)) throw ArgumentError("empty frequency band");
  if (!(fps > 2.0 * band.high)) {
    throw ArgumentError("fps must exceed twice the band's upper edge");
  }
  double mean = 0.0;
  for (double v : trace) mean += v;
  mean /= double(n);
  double spread = 0.0;
  for (double v : trace) spread = std::max(spread, std::abs(v - mean));
  if (spread <= 1e-12 * std::max(1.0, std::abs(mean))) throw NoDominantPeak("trace is flat");

  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n - 1));
    x[i] = (trace[i] - mean) * hann;
  }
  const std::size_t bins = n / 2 + 1;
  auto* out = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins));
  fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), x.data(), out, FFTW_ESTIMATE);
  fftw_execute(plan);

  SpectrumEstimate est;
  est.band = band;
  est.frequency_resolution = fps / double(n);
  std::vector<double> in_band;
  std::size_t best = bins;
  for (std::size_t k = 0; k < bins; ++k) {
    const double f = double(k) * est.frequency_resolution;
    const double p = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    est.spectrum.emplace_back(f, p);
    if (f < band.low || f > band.high) continue;
    in_band.push_back(p);
    if (best == bins || p > est.spectrum[best].second) best = k;
  }
  fftw_destroy_plan(plan);
  fftw_free(out);

  if (in_band.empty()) throw NoDominantPeak("no frequency bin inside the band");
  auto mid = in_band.begin() + static_cast<std::ptrdiff_t>(in_band.size() / 2);
  std::nth_element(in_band.begin(), mid, in_band.end());
  est.median_power = *mid;
  est.peak_power = est.spectrum[best].second;
  est.dominant_frequency = est.spectrum[best].first;
  est.rate_bpm = 60.0 * est.dominant_frequency;
  if (!(est.peak_power >= peak_ratio * est.median_power) || !(est.peak_power > 0.0)) {
    throw NoDominantPeak("in-band peak is below " + std::to_string(peak_ratio) +
                         "x the median power");
  }
  return est;
}

void write_track_csv(const DisplacementTrack& track, std::span<const PixelLocation> pixels,
                     const std::filesystem::path& path) {
  write_atomically(path, [&](std::ostream& out) {
    out << "frame_index,time_s,x,y,d_pixels\n";
    out.precision(9);
    for (const auto& p : pixels) {
      for (std::size_t i = 1; i <= track.frame_count(); ++i) {
        out << i << ',' << double(i) / track.fps() << ',' << p.x << ',' << p.y << ','
            << track.d(i, p) << '\n';
      }
    }
  });
}

TrackCsv read_track_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open track " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("frame_index,time_s,x,y,d_pixels", 0) != 0) {
    throw FormatError(path.string() + ": missing track header");
  }
  std::map<std::pair<int, int>, std::map<long, std::pair<double, double>>> rows;
  std::vector<std::pair<int, int>> order;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    long frame;
    double t, d;
    int x, y;
    char c1, c2, c3, c4;
    if (!(ss >> frame >> c1 >> t >> c2 >> x >> c3 >> y >> c4 >> d) || c1 != ',' || c2 != ',' ||
        c3 != ',' || c4 != ',') {
      throw FormatError(path.string() + ": malformed row " + std::to_string(lineno));
    }
    auto [it, fresh] = rows.try_emplace({x, y});
    if (fresh) order.push_back({x, y});
    it->second[frame] = {t, d};
  }
  // Pixels in the order they first appear in the file.
  TrackCsv csv;
  for (const auto& xy : order) {
    const auto& series = rows.at(xy);
    csv.pixels.push_back({xy.first, xy.second});
    std::vector<double> trace;
    std::vector<double> times;
    for (const auto& [frame, td] : series) {
      times.push_back(td.first);
      trace.push_back(td.second);
    }
    if (csv.times.empty()) csv.times = times;
    csv.traces.push_back(std::move(trace));
  }
  return csv;
}

}  // namespace uraft
