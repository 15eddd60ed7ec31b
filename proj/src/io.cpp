#include "uraft/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "uraft/error.hpp"

namespace uraft {

namespace {

constexpr std::array<char, 4> kFlowMagic = {'U', 'D', 'F', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_flow(const DisplacementField& field, std::ostream& out) {
  out.write(kFlowMagic.data(), 4);
  put_u32(out, static_cast<std::uint32_t>(field.width()));
  put_u32(out, static_cast<std::uint32_t>(field.height()));
  const auto ux = field.ux_plane();
  const auto uy = field.uy_plane();
  for (std::size_t i = 0; i < ux.size(); ++i) {
    put_f32(out, ux[i]);
    put_f32(out, uy[i]);
  }
}

void write_flow(const DisplacementField& field, const std::filesystem::path& path) {
  write_atomically(path, [&](std::ostream& out) { write_flow(field, out); });
}

DisplacementField read_flow(std::istream& in) {
  unsigned char header[12];
  in.read(reinterpret_cast<char*>(header), sizeof header);
  if (in.gcount() != static_cast<std::streamsize>(sizeof header)) {
    throw FormatError("UDF1 stream shorter than its 12-byte header");
  }
  if (std::memcmp(header, kFlowMagic.data(), 4) != 0) {
    throw FormatError("bad magic bytes, expected UDF1");
  }
  const std::uint32_t width = get_u32(header + 4);
  const std::uint32_t height = get_u32(header + 8);
  if (width == 0 || height == 0 || width > (1u << 16) || height > (1u << 16)) {
    throw FormatError("implausible UDF1 dimensions");
  }
  const std::size_t n = std::size_t(width) * height;
  std::vector<unsigned char> payload(n * 8);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (in.gcount() != static_cast<std::streamsize>(payload.size())) {
    throw FormatError("truncated UDF1 payload");
  }
  std::vector<float> ux(n), uy(n);
  for (std::size_t i = 0; i < n; ++i) {
    ux[i] = std::bit_cast<float>(get_u32(payload.data() + 8 * i));
    uy[i] = std::bit_cast<float>(get_u32(payload.data() + 8 * i + 4));
  }
  try {
    return DisplacementField(static_cast<int>(height), static_cast<int>(width), std::move(ux),
                             std::move(uy));
  } catch (const InvalidImage& e) {
    throw FormatError(std::string("UDF1 payload rejected: ") + e.what());
  }
}

DisplacementField read_flow(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open flow file " + path.string());
  return read_flow(in);
}

RawImage read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw FormatError("cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("libpng initialization failed");
  }
  RawImage raw;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY || (depth != 8 && depth != 16)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": only 8/16-bit grayscale PNG is supported");
  }
  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.bit_depth = depth;
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * raw.height);
  rows.resize(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = buffer.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  raw.values.resize(static_cast<std::size_t>(raw.width) * raw.height);
  for (int y = 0; y < raw.height; ++y) {
    const unsigned char* row = rows[y];
    for (int x = 0; x < raw.width; ++x) {
      raw.values[static_cast<std::size_t>(y) * raw.width + x] =
          depth == 8 ? row[x] : double((row[2 * x] << 8) | row[2 * x + 1]);
    }
  }
  return raw;
}

Image read_png_image(const std::filesystem::path& path) {
  const RawImage raw = read_png(path);
  return normalize_image(raw.values, raw.height, raw.width);
}

Image read_png_levels(const std::filesystem::path& path) {
  const RawImage raw = read_png(path);
  const double top = raw.bit_depth == 8 ? 255.0 : 65535.0;
  std::vector<float> pixels(raw.values.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<float>(raw.values[i] / top);
  return Image(raw.height, raw.width, std::move(pixels));
}

namespace {

void write_png_rows(const std::filesystem::path& path, int height, int width, int depth,
                    int color, const std::vector<unsigned char>& buffer, std::size_t stride) {
  auto tmp = path;
  tmp += ".tmp";
  {
    FilePtr file(std::fopen(tmp.c_str(), "wb"));
    if (!file) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
      png_destroy_write_struct(&png, &info);
      throw std::runtime_error("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw std::runtime_error("failed writing PNG " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, width, height, depth, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // Fixed compression settings keep reruns byte-identical.
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y) {
      png_write_row(png, const_cast<png_bytep>(buffer.data() + stride * y));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void write_png(const Image& image, const std::filesystem::path& path, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw ArgumentError("PNG bit depth must be 8 or 16");
  const int w = image.width();
  const int h = image.height();
  const std::size_t stride = static_cast<std::size_t>(w) * (bit_depth / 8);
  std::vector<unsigned char> buffer(stride * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = std::clamp(double(image.at(x, y)), 0.0, 1.0);
      if (bit_depth == 8) {
        buffer[stride * y + x] = static_cast<unsigned char>(std::lround(v * 255.0));
      } else {
        const auto code = static_cast<std::uint16_t>(std::lround(v * 65535.0));
        buffer[stride * y + 2 * x] = static_cast<unsigned char>(code >> 8);
        buffer[stride * y + 2 * x + 1] = static_cast<unsigned char>(code & 0xff);
      }
    }
  }
  write_png_rows(path, h, w, bit_depth, PNG_COLOR_TYPE_GRAY, buffer, stride);
}

void write_png_rgb(const std::vector<unsigned char>& rgb, int height, int width,
                   const std::filesystem::path& path) {
  if (rgb.size() != static_cast<std::size_t>(height) * width * 3) {
    throw ArgumentError("RGB buffer size does not match dimensions");
  }
  write_png_rows(path, height, width, 8, PNG_COLOR_TYPE_RGB, rgb, static_cast<std::size_t>(width) * 3);
}

VideoSequence load_sequence(std::vector<std::filesystem::path> frames, double fps) {
  std::sort(frames.begin(), frames.end(),
            [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
  if (frames.size() < 2) {
    throw InsufficientFrames("a sequence needs at least 2 frames, got " +
                             std::to_string(frames.size()));
  }
  std::vector<Image> images;
  images.reserve(frames.size());
  for (const auto& f : frames) images.push_back(read_png_image(f));
  return VideoSequence(std::move(images), fps);
}

VideoSequence load_sequence(const std::filesystem::path& directory, double fps) {
  if (!std::filesystem::is_directory(directory)) {
    throw ArgumentError("frame directory does not exist: " + directory.string());
  }
  std::vector<std::filesystem::path> frames;
  for (const auto& entry : std::filesystem::directory_iterator(directory)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") frames.push_back(entry.path());
  }
  return load_sequence(std::move(frames), fps);
}

}  // namespace uraft
