#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace featmimic {

using Shape = std::vector<std::size_t>;

/// Raised when a numeric operation produces NaN or Inf.
class NumericFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_volume(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float tensor. Pixel images use (channels, height, width).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  const std::vector<float>& values() const { return data_; }

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  /// Same values under a new shape of equal volume.
  Tensor reshaped(Shape shape) const;
  Tensor flattened() const { return reshaped({size()}); }

  bool all_finite() const;
  float max_abs() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

}  // namespace featmimic
