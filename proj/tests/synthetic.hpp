#pragma once

#include <cmath>

#include "featmimic/image.hpp"

namespace featmimic::testing {

/// Smooth textured test pattern sampled at (x - dx, y - dy).
inline double blob_pattern(double x, double y) {
  auto blob = [](double x, double y, double cx, double cy, double s) {
    return std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * s * s));
  };
  return 60.0 + 110.0 * blob(x, y, 20, 24, 7) + 80.0 * blob(x, y, 44, 38, 9) - 50.0 * blob(x, y, 30, 50, 5);
}

inline GrayImage shifted_pattern(std::size_t size, double dx, double dy) {
  GrayImage g(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) g(x, y) = blob_pattern(double(x) - dx, double(y) - dy);
  return g;
}

}  // namespace featmimic::testing
