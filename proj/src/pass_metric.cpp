#include "featmimic/pass_metric.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace featmimic {

namespace {

constexpr std::size_t kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kSsimC2 = (0.03 * 255.0) * (0.03 * 255.0);

void require_same_size(const GrayImage& a, const GrayImage& b, const char* what) {
  if (a.width != b.width || a.height != b.height) {
    throw std::invalid_argument(std::string(what) + ": images differ in size");
  }
}

double sample_bilinear(const GrayImage& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const auto x0 = static_cast<std::size_t>(x);
  const auto y0 = static_cast<std::size_t>(y);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double top = img(x0, y0) * (1.0 - fx) + img(x1, y0) * fx;
  const double bottom = img(x0, y1) * (1.0 - fx) + img(x1, y1) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

struct Point {
  double x, y;
};

Point apply(const MotionModel& m, double x, double y) {
  const auto& a = m.matrix;
  double px = a[0] * x + a[1] * y + a[2];
  double py = a[3] * x + a[4] * y + a[5];
  if (m.kind == MotionKind::homography) {
    const double w = a[6] * x + a[7] * y + a[8];
    px /= w;
    py /= w;
  }
  return {px, py};
}

// Central differences, one-sided (halved) at the replicated border.
std::pair<GrayImage, GrayImage> image_gradients(const GrayImage& img) {
  GrayImage gx(img.width, img.height), gy(img.width, img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t xl = x == 0 ? 0 : x - 1, xr = std::min(x + 1, img.width - 1);
      const std::size_t yu = y == 0 ? 0 : y - 1, yd = std::min(y + 1, img.height - 1);
      gx(x, y) = 0.5 * (img(xr, y) - img(xl, y));
      gy(x, y) = 0.5 * (img(x, yd) - img(x, yu));
    }
  }
  return {std::move(gx), std::move(gy)};
}

std::size_t parameter_count(MotionKind kind) {
  switch (kind) {
    case MotionKind::translation:
      return 2;
    case MotionKind::affine:
      return 6;
    case MotionKind::homography:
      return 8;
  }
  return 0;
}

// Matrix entries driven by each parameter, in order.
constexpr std::array<std::size_t, 2> kTranslationEntries = {2, 5};
constexpr std::array<std::size_t, 6> kAffineEntries = {0, 1, 2, 3, 4, 5};
constexpr std::array<std::size_t, 8> kHomographyEntries = {0, 1, 2, 3, 4, 5, 6, 7};

void update_warp(MotionModel& m, const Eigen::VectorXd& delta) {
  switch (m.kind) {
    case MotionKind::translation:
      for (std::size_t k = 0; k < kTranslationEntries.size(); ++k) m.matrix[kTranslationEntries[k]] += delta[k];
      break;
    case MotionKind::affine:
      for (std::size_t k = 0; k < kAffineEntries.size(); ++k) m.matrix[kAffineEntries[k]] += delta[k];
      break;
    case MotionKind::homography:
      for (std::size_t k = 0; k < kHomographyEntries.size(); ++k) m.matrix[kHomographyEntries[k]] += delta[k];
      break;
  }
}

// Row of the steepest-descent image for pixel (x, y): image gradient times warp Jacobian.
void jacobian_row(const MotionModel& m, double x, double y, double gx, double gy, Eigen::Ref<Eigen::RowVectorXd> row) {
  switch (m.kind) {
    case MotionKind::translation:
      row << gx, gy;
      return;
    case MotionKind::affine:
      row << gx * x, gx * y, gx, gy * x, gy * y, gy;
      return;
    case MotionKind::homography: {
      const auto& a = m.matrix;
      const double w = a[6] * x + a[7] * y + a[8];
      const double px = (a[0] * x + a[1] * y + a[2]) / w;
      const double py = (a[3] * x + a[4] * y + a[5]) / w;
      const double gxw = gx / w, gyw = gy / w;
      row << gxw * x, gxw * y, gxw, gyw * x, gyw * y, gyw, -(gxw * px + gyw * py) * x, -(gxw * px + gyw * py) * y;
      return;
    }
  }
}

Eigen::VectorXd zero_mean(const GrayImage& img) {
  Eigen::Map<const Eigen::VectorXd> v(img.pixels.data(), static_cast<Eigen::Index>(img.pixels.size()));
  return v.array() - v.mean();
}

double variance(const GrayImage& img) { return zero_mean(img).squaredNorm(); }

EccResult fallback_result(const GrayImage& moving, const GrayImage& fixed, MotionKind kind, std::string reason) {
  EccResult r;
  r.aligned = moving;
  r.transform = MotionModel::identity(kind);
  r.initial_correlation = correlation_coefficient(moving, fixed);
  r.correlation = r.initial_correlation;
  r.fallback = true;
  r.fallback_reason = std::move(reason);
  return r;
}

std::vector<double> gaussian_kernel() {
  std::vector<double> k(kSsimWindow);
  const double center = static_cast<double>(kSsimWindow / 2);
  double sum = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - center;
    k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable Gaussian filtering keeping only fully contained windows.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t width, std::size_t height,
                                 const std::vector<double>& k) {
  const std::size_t ow = width - kSsimWindow + 1, oh = height - kSsimWindow + 1;
  std::vector<double> rows(ow * height);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < kSsimWindow; ++i) acc += k[i] * img[y * width + x + i];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(ow * oh);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < kSsimWindow; ++i) acc += k[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(MotionKind kind) {
  switch (kind) {
    case MotionKind::translation:
      return "translation";
    case MotionKind::affine:
      return "affine";
    case MotionKind::homography:
      return "homography";
  }
  return "?";
}

MotionKind motion_kind_from_string(std::string_view name) {
  if (name == "translation") return MotionKind::translation;
  if (name == "affine") return MotionKind::affine;
  if (name == "homography") return MotionKind::homography;
  throw std::invalid_argument("unknown motion model '" + std::string(name) + "'");
}

void EccConfig::validate() const {
  if (max_iterations < 1) throw std::invalid_argument("ECC max_iterations must be at least 1");
  if (!(epsilon > 0.0)) throw std::invalid_argument("ECC epsilon must be positive");
}

GrayImage to_grayscale(const Tensor& image) {
  std::size_t channels = 1, height = 0, width = 0;
  if (image.rank() == 3) {
    channels = image.shape()[0];
    height = image.shape()[1];
    width = image.shape()[2];
  } else if (image.rank() == 2) {
    height = image.shape()[0];
    width = image.shape()[1];
  } else {
    throw std::invalid_argument("grayscale conversion needs an image tensor, got " + shape_string(image.shape()));
  }
  const std::size_t plane = height * width;
  GrayImage gray(width, height);
  if (channels == 1) {
    for (std::size_t i = 0; i < plane; ++i) gray.pixels[i] = image[i];
  } else if (channels == 3) {
    for (std::size_t i = 0; i < plane; ++i) {
      gray.pixels[i] = 0.299 * image[i] + 0.587 * image[plane + i] + 0.114 * image[2 * plane + i];
    }
  } else {
    throw std::invalid_argument("grayscale conversion supports 1 or 3 channels, got " + std::to_string(channels));
  }
  return gray;
}

double correlation_coefficient(const GrayImage& a, const GrayImage& b) {
  require_same_size(a, b, "correlation");
  const Eigen::VectorXd za = zero_mean(a), zb = zero_mean(b);
  const double denom = za.norm() * zb.norm();
  return denom > 0.0 ? za.dot(zb) / denom : 0.0;
}

GrayImage warp_image(const GrayImage& moving, const MotionModel& warp, std::size_t width, std::size_t height) {
  GrayImage out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const Point p = apply(warp, static_cast<double>(x), static_cast<double>(y));
      out(x, y) = sample_bilinear(moving, p.x, p.y);
    }
  }
  return out;
}

EccResult ecc_align(const GrayImage& moving, const GrayImage& fixed, const EccConfig& config) {
  config.validate();
  require_same_size(moving, fixed, "ECC alignment");
  if (variance(moving) == 0.0 || variance(fixed) == 0.0) {
    return fallback_result(moving, fixed, config.model, "zero-variance image");
  }
  if (moving.pixels == fixed.pixels) {
    EccResult same;
    same.aligned = moving;
    same.transform = MotionModel::identity(config.model);
    same.initial_correlation = same.correlation = 1.0;
    return same;
  }

  const std::size_t width = fixed.width, height = fixed.height, n = width * height;
  const auto params = static_cast<Eigen::Index>(parameter_count(config.model));
  const Eigen::VectorXd templ = zero_mean(fixed);
  const double templ_norm = templ.norm();
  const auto [grad_x, grad_y] = image_gradients(moving);

  MotionModel warp = MotionModel::identity(config.model);
  MotionModel best = warp;
  double best_rho = -std::numeric_limits<double>::infinity();
  double previous_rho = 0.0;
  double initial_rho = 0.0;
  std::size_t updates = 0;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> jac(static_cast<Eigen::Index>(n), params);

  for (;;) {
    const GrayImage warped = warp_image(moving, warp, width, height);
    const Eigen::VectorXd image = zero_mean(warped);
    const double image_norm = image.norm();
    const double rho = image_norm > 0.0 ? templ.dot(image) / (templ_norm * image_norm) : 0.0;
    if (updates == 0) initial_rho = rho;
    if (rho > best_rho) {
      best_rho = rho;
      best = warp;
    }
    if (updates == config.max_iterations) break;
    if (updates > 0 && rho - previous_rho < config.epsilon) break;
    previous_rho = rho;

    const GrayImage wgx = warp_image(grad_x, warp, width, height);
    const GrayImage wgy = warp_image(grad_y, warp, width, height);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const auto i = static_cast<Eigen::Index>(y * width + x);
        jacobian_row(warp, static_cast<double>(x), static_cast<double>(y), wgx(x, y), wgy(x, y), jac.row(i));
      }
    }
    const Eigen::MatrixXd hessian = jac.transpose() * jac;
    const Eigen::LDLT<Eigen::MatrixXd> solver(hessian);
    if (solver.info() != Eigen::Success || !solver.isPositive() || (solver.vectorD().array() <= 0.0).any()) {
      return fallback_result(moving, fixed, config.model, "singular ECC Hessian");
    }
    const Eigen::VectorXd image_proj = jac.transpose() * image;
    const Eigen::VectorXd templ_proj = jac.transpose() * templ;
    const Eigen::VectorXd h_image_proj = solver.solve(image_proj);
    const double lambda_n = image_norm * image_norm - image_proj.dot(h_image_proj);
    const double lambda_d = templ.dot(image) - templ_proj.dot(h_image_proj);
    if (!(lambda_d > 0.0)) {
      return fallback_result(moving, fixed, config.model, "uncorrelated images");
    }
    const Eigen::VectorXd error = (lambda_n / lambda_d) * templ - image;
    const Eigen::VectorXd delta = solver.solve(jac.transpose() * error);
    if (!delta.allFinite()) return fallback_result(moving, fixed, config.model, "non-finite ECC update");
    update_warp(warp, delta);
    ++updates;
  }

  EccResult result;
  result.transform = best;
  result.aligned = warp_image(moving, best, width, height);
  result.initial_correlation = initial_rho;
  result.correlation = best_rho;
  result.iterations = updates;
  return result;
}

double ssim(const GrayImage& a, const GrayImage& b) {
  require_same_size(a, b, "SSIM");
  if (a.width < kSsimWindow || a.height < kSsimWindow) {
    throw std::invalid_argument("SSIM needs images of at least 11x11 pixels");
  }
  const std::size_t n = a.pixels.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a.pixels[i] * a.pixels[i];
    bb[i] = b.pixels[i] * b.pixels[i];
    ab[i] = a.pixels[i] * b.pixels[i];
  }
  const auto k = gaussian_kernel();
  const auto mu_a = filter_valid(a.pixels, a.width, a.height, k);
  const auto mu_b = filter_valid(b.pixels, a.width, a.height, k);
  const auto e_aa = filter_valid(aa, a.width, a.height, k);
  const auto e_bb = filter_valid(bb, a.width, a.height, k);
  const auto e_ab = filter_valid(ab, a.width, a.height, k);

  double sum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
    const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    const double mean_ab = mu_a[i] * mu_b[i];
    const double num = (2.0 * mean_ab + kSsimC1) * (2.0 * cov + kSsimC2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kSsimC1) * (var_a + var_b + kSsimC2);
    sum += num / den;
  }
  return sum / static_cast<double>(mu_a.size());
}

PassScore pass_score(const Tensor& perturbed, const Tensor& original, const EccConfig& config) {
  if (perturbed.shape() != original.shape()) {
    throw std::invalid_argument("PASS needs images of equal shape: " + shape_string(perturbed.shape()) + " vs " +
                                shape_string(original.shape()));
  }
  const GrayImage moving = to_grayscale(perturbed);
  const GrayImage fixed = to_grayscale(original);
  const EccResult aligned = ecc_align(moving, fixed, config);
  return {ssim(aligned.aligned, fixed), aligned.fallback, aligned.transform};
}

PerturbationNorms perturbation_norms(const Tensor& perturbed, const Tensor& original) {
  if (perturbed.shape() != original.shape()) {
    throw std::invalid_argument("perturbation norms need tensors of equal shape");
  }
  double sq = 0.0, peak = 0.0;
  for (std::size_t i = 0; i < perturbed.size(); ++i) {
    const double d = std::fabs(static_cast<double>(perturbed[i]) - static_cast<double>(original[i]));
    sq += d * d;
    peak = std::max(peak, d);
  }
  return {std::sqrt(sq), peak};
}

}  // namespace featmimic
