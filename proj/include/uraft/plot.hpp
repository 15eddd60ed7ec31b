#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace uraft {

struct PlotSeries {
  std::vector<double> x;
  std::vector<double> y;
  std::array<std::uint8_t, 3> color{0, 0, 0};
};

/// Rasterizes line series onto a framed canvas with numbered axis ticks and
/// writes an RGB PNG. Returns false (after printing a warning) if the image
/// cannot be written; plots never abort a pipeline.
bool write_line_plot(const std::vector<PlotSeries>& series, const std::filesystem::path& path,
                     int width = 720, int height = 360);

}  // namespace uraft
