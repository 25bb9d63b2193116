#include "featmimic/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace featmimic {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string token;
  for (;;) {
    const int c = in.get();
    if (c == EOF) return token;
    if (c == '#' && token.empty()) {
      std::string ignored;
      std::getline(in, ignored);
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
}

}  // namespace

GrayImage::GrayImage(std::size_t w, std::size_t h, std::vector<double> values)
    : width(w), height(h), pixels(std::move(values)) {
  if (pixels.size() != width * height) throw std::invalid_argument("gray image size does not match its extents");
}

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open image");
  const std::string magic = header_token(in);
  std::size_t channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    fail(path, "not a binary PGM/PPM file");
  }
  std::size_t width = 0, height = 0, maxval = 0;
  try {
    width = std::stoul(header_token(in));
    height = std::stoul(header_token(in));
    maxval = std::stoul(header_token(in));
  } catch (const std::exception&) {
    fail(path, "malformed header");
  }
  if (width == 0 || height == 0) fail(path, "empty image");
  if (maxval != 255) fail(path, "only maxval 255 is supported");

  std::vector<unsigned char> raw(width * height * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) fail(path, "truncated pixel data");

  Tensor img({channels, height, width});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        img[(c * height + y) * width + x] = raw[(y * width + x) * channels + c];
      }
    }
  }
  return img;
}

void write_pnm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.shape()[0] != 1 && image.shape()[0] != 3)) {
    throw std::invalid_argument("write_pnm needs a (1,H,W) or (3,H,W) tensor, got " + shape_string(image.shape()));
  }
  const std::size_t channels = image.shape()[0], height = image.shape()[1], width = image.shape()[2];
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot write image");
  out << (channels == 1 ? "P5" : "P6") << '\n' << width << ' ' << height << "\n255\n";
  std::vector<unsigned char> raw(width * height * channels);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        const float v = std::round(image[(c * height + y) * width + x]);
        raw[(y * width + x) * channels + c] = static_cast<unsigned char>(std::clamp(v, 0.0f, 255.0f));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) fail(path, "write failed");
}

}  // namespace featmimic
