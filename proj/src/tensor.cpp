#include "featmimic/tensor.hpp"

#include <cmath>
#include <sstream>

namespace featmimic {

std::size_t shape_volume(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ')';
  return out.str();
}

static void check_shape(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one extent");
  for (auto extent : shape) {
    if (extent == 0) throw std::invalid_argument("tensor extents must be positive: " + shape_string(shape));
  }
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
  check_shape(shape_);
  if (shape_volume(shape_) != data_.size()) {
    throw std::invalid_argument("tensor shape " + shape_string(shape_) + " does not match " +
                                std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

float Tensor::max_abs() const {
  float peak = 0.0f;
  for (float v : data_) peak = std::max(peak, std::fabs(v));
  return peak;
}

}  // namespace featmimic
