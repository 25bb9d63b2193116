#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "featmimic/tensor.hpp"

namespace featmimic {

/// Single-channel image with real-valued pixels, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), pixels(w * h, fill) {}
  GrayImage(std::size_t w, std::size_t h, std::vector<double> values);

  double& operator()(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  double operator()(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// Reads binary PGM (P5) or PPM (P6) with maxval 255 into a (C,H,W) tensor.
Tensor read_pnm(const std::filesystem::path& path);

/// Writes a (1,H,W) tensor as PGM or (3,H,W) as PPM. Values are rounded and
/// clamped to [0,255].
void write_pnm(const std::filesystem::path& path, const Tensor& image);

}  // namespace featmimic
