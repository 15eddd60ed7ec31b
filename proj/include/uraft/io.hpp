#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "uraft/image.hpp"

namespace uraft {

// UDF1 flow container: "UDF1", u32 width, u32 height (little-endian), then
// height*width records of (u_x, u_y) as little-endian IEEE-754 float32, row-major.
void write_flow(const DisplacementField& field, std::ostream& out);
void write_flow(const DisplacementField& field, const std::filesystem::path& path);
DisplacementField read_flow(std::istream& in);
DisplacementField read_flow(const std::filesystem::path& path);

/// Raw grayscale PNG contents before normalization.
struct RawImage {
  int height = 0;
  int width = 0;
  int bit_depth = 8;
  std::vector<double> values;
};

/// Reads an 8- or 16-bit grayscale PNG. Throws FormatError otherwise.
RawImage read_png(const std::filesystem::path& path);
/// Reads a PNG and min-max normalizes it into an Image.
Image read_png_image(const std::filesystem::path& path);
/// Reads a PNG and maps its integer levels onto [0,1] by dividing by the
/// maximum code value (255 or 65535), without stretching.
Image read_png_levels(const std::filesystem::path& path);
/// Writes an Image as 8- or 16-bit grayscale PNG with rounding.
void write_png(const Image& image, const std::filesystem::path& path, int bit_depth = 16);
/// Writes an 8-bit RGB buffer (row-major, 3 bytes per pixel).
void write_png_rgb(const std::vector<unsigned char>& rgb, int height, int width,
                   const std::filesystem::path& path);

/// Loads every *.png in `directory` in lexicographic filename order, each frame
/// normalized to [0,1].
VideoSequence load_sequence(const std::filesystem::path& directory, double fps);
/// Loads the given frames (sorted lexicographically by filename).
VideoSequence load_sequence(std::vector<std::filesystem::path> frames, double fps);

/// Writes atomically: `write` fills a temporary sibling which is then renamed.
template <typename Writer>
void write_atomically(const std::filesystem::path& path, Writer&& write);

}  // namespace uraft

#include <fstream>
#include <string>

namespace uraft {

template <typename Writer>
void write_atomically(const std::filesystem::path& path, Writer&& write) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    write(out);
    out.flush();
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace uraft
