#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include "featmimic/image.hpp"
#include "featmimic/tensor.hpp"

namespace featmimic {

enum class MotionKind { translation, affine, homography };

std::string_view to_string(MotionKind kind);
MotionKind motion_kind_from_string(std::string_view name);

/// 3x3 row-major warp mapping fixed-image coordinates (x, y, 1) into the
/// moving image. Last row is (0,0,1) except for homographies, which keep
/// element (2,2) at 1.
struct MotionModel {
  MotionKind kind = MotionKind::homography;
  std::array<double, 9> matrix{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static MotionModel identity(MotionKind kind) { return MotionModel{kind, {1, 0, 0, 0, 1, 0, 0, 0, 1}}; }
  bool is_identity() const { return matrix == identity(kind).matrix; }
  double translation_x() const { return matrix[2]; }
  double translation_y() const { return matrix[5]; }
};

struct EccConfig {
  std::size_t max_iterations = 100;
  /// Iteration stops once the correlation coefficient improves by less than this.
  double epsilon = 0.01;
  MotionKind model = MotionKind::homography;

  void validate() const;
};

struct EccResult {
  GrayImage aligned;
  MotionModel transform;
  /// Enhanced correlation coefficient at the identity warp and at the result.
  double initial_correlation = 0.0;
  double correlation = 0.0;
  std::size_t iterations = 0;
  /// Alignment was skipped or abandoned; transform is identity, aligned == moving.
  bool fallback = false;
  std::string fallback_reason;
};

/// Luminance 0.299 R + 0.587 G + 0.114 B for 3 channels; 1 channel passes through.
GrayImage to_grayscale(const Tensor& image);

/// Zero-mean normalized correlation of two equally sized images (0 if either is flat).
double correlation_coefficient(const GrayImage& a, const GrayImage& b);

/// moving(W(x)) sampled bilinearly for every pixel x of a width x height grid,
/// replicating the border for out-of-range coordinates.
GrayImage warp_image(const GrayImage& moving, const MotionModel& warp, std::size_t width, std::size_t height);

/// Forward-additive ECC maximization (Evangelidis & Psarakis) of
/// corr(moving(W(x)), fixed(x)) starting from the identity warp. The best
/// evaluated warp is returned, so the correlation never drops below the start.
EccResult ecc_align(const GrayImage& moving, const GrayImage& fixed, const EccConfig& config = {});

/// Mean SSIM over all fully contained 11x11 Gaussian windows (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 255. Both images must be at least 11x11.
double ssim(const GrayImage& a, const GrayImage& b);

struct PassScore {
  double score = 0.0;
  bool alignment_fallback = false;
  MotionModel transform;
};

/// SSIM between the perturbed image aligned onto the original and the
/// original, both in grayscale. On alignment fallback the score is plain SSIM.
PassScore pass_score(const Tensor& perturbed, const Tensor& original, const EccConfig& config = {});

struct PerturbationNorms {
  double l2 = 0.0;
  double linf = 0.0;
};

PerturbationNorms perturbation_norms(const Tensor& perturbed, const Tensor& original);

}  // namespace featmimic
