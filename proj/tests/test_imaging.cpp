#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <bit>
#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>

#include "uraft/error.hpp"
#include "uraft/io.hpp"

using namespace uraft;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("uraft_imaging_" + std::to_string(::getpid())) / name;
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("normalize_image rescales affinely") {
  const std::vector<double> raw{0.0, 127.5, 255.0, 255.0};
  auto im = normalize_image(raw, 2, 2);
  CHECK(im.at(0, 0) == 0.0f);
  CHECK(im.at(1, 0) == 0.5f);
  CHECK(im.at(0, 1) == 1.0f);
}

TEST_CASE("normalize_image degenerate and invalid input") {
  const std::vector<double> sevens(9, 7.0);
  auto im = normalize_image(sevens, 3, 3);
  for (float v : im.pixels()) CHECK(v == 0.0f);
  const std::vector<double> bad{0.0, std::nan(""), 1.0, 2.0};
  CHECK_THROWS_AS(normalize_image(bad, 2, 2), InvalidImage);
  CHECK_THROWS_AS(normalize_image({}, 0, 0), InvalidImage);
}

TEST_CASE("normalize_image is idempotent on full-range images") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> raw(64);
  for (auto& v : raw) v = u(rng);
  raw[3] = 0.0;
  raw[9] = 1.0;
  auto once = normalize_image(raw, 8, 8);
  std::vector<double> again(once.pixels().begin(), once.pixels().end());
  CHECK(normalize_image(again, 8, 8) == once);
}

TEST_CASE("image rejects out-of-range intensities") {
  CHECK_THROWS_AS(Image(1, 2, {0.5f, 1.5f}), InvalidImage);
  CHECK_THROWS_AS(Image(1, 2, {0.5f}), InvalidImage);
}

TEST_CASE("UDF1 round trip is bit exact") {
  DisplacementField f(2, 3);
  f.set(0, 0, 3.0f, -4.0f);
  f.set(2, 1, std::bit_cast<float>(0x3f800001u), -0.0f);
  f.set(1, 1, 1e-38f, 123456.789f);
  std::stringstream ss;
  write_flow(f, ss);
  auto bytes = ss.str();
  REQUIRE(bytes.size() == 12 + 6 * 8);
  CHECK(bytes.substr(0, 4) == "UDF1");
  CHECK(static_cast<unsigned char>(bytes[4]) == 3);  // width first
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);
  auto g = read_flow(ss);
  REQUIRE(g.height() == 2);
  REQUIRE(g.width() == 3);
  for (std::size_t i = 0; i < f.size(); ++i) {
    CHECK(std::bit_cast<std::uint32_t>(g.ux_plane()[i]) == std::bit_cast<std::uint32_t>(f.ux_plane()[i]));
    CHECK(std::bit_cast<std::uint32_t>(g.uy_plane()[i]) == std::bit_cast<std::uint32_t>(f.uy_plane()[i]));
  }
}

TEST_CASE("UDF1 zero field and file round trip") {
  DisplacementField zero(2, 2);
  const auto path = scratch("flow") / "zero.udf1";
  write_flow(zero, path);
  CHECK(read_flow(path) == zero);
}

TEST_CASE("UDF1 rejects bad magic and truncation") {
  std::stringstream bad("XXXX\x02\0\0\0\x02\0\0\0");
  CHECK_THROWS_AS(read_flow(bad), FormatError);

  DisplacementField f(2, 2);
  std::stringstream ss;
  write_flow(f, ss);
  auto bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_flow(cut), FormatError);
  std::stringstream tiny("UDF");
  CHECK_THROWS_AS(read_flow(tiny), FormatError);
}

TEST_CASE("PNG writes and reads back at 8 and 16 bits") {
  const auto dir = scratch("png");
  std::vector<float> px{0.0f, 0.25f, 0.5f, 1.0f};
  Image im(2, 2, px);
  write_png(im, dir / "a16.png", 16);
  write_png(im, dir / "a8.png", 8);
  auto r16 = read_png(dir / "a16.png");
  CHECK(r16.bit_depth == 16);
  CHECK(r16.values[1] == std::round(0.25 * 65535));
  auto levels = read_png_levels(dir / "a8.png");
  CHECK(levels.at(1, 1) == 1.0f);
  CHECK(levels.at(0, 1) == doctest::Approx(128.0 / 255.0));
  auto norm = read_png_image(dir / "a16.png");
  CHECK(norm.at(1, 1) == 1.0f);
}

TEST_CASE("load_sequence sorts, normalizes and validates") {
  const auto dir = scratch("seq");
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  auto make = [&](int n) {
    std::vector<float> px(static_cast<std::size_t>(n) * n);
    for (auto& v : px) v = u(rng);
    return Image(n, n, px);
  };
  const auto a = dir / "ok";
  fs::create_directories(a);
  write_png(make(64), a / "f2.png");
  write_png(make(64), a / "f0.png");
  write_png(make(64), a / "f1.png");
  auto seq = load_sequence(a, 20.0);
  CHECK(seq.size() == 3);
  CHECK(seq.fps() == 20.0);
  CHECK(seq[0] == read_png_image(a / "f0.png"));

  const auto mixed = dir / "mixed";
  fs::create_directories(mixed);
  write_png(make(64), mixed / "a.png");
  write_png(make(32), mixed / "b.png");
  CHECK_THROWS_AS(load_sequence(mixed, 20.0), DimensionMismatch);

  const auto single = dir / "single";
  fs::create_directories(single);
  write_png(make(32), single / "a.png");
  CHECK_THROWS_AS(load_sequence(single, 20.0), InsufficientFrames);
  CHECK_THROWS_AS(load_sequence(a, 0.0), ArgumentError);
}

TEST_CASE("field statistics") {
  DisplacementField f(1, 2);
  f.set(0, 0, 3.0f, 4.0f);
  CHECK(f.mean_magnitude() == doctest::Approx(2.5));
  CHECK(f.max_magnitude() == doctest::Approx(5.0));
  DisplacementField g(1, 2);
  g.set(0, 0, 3.0f, 4.0f);
  g.set(1, 0, 1.0f, 0.0f);
  CHECK(mean_endpoint_error(f, g) == doctest::Approx(0.5));
}
