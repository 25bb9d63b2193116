#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "featmimic/pass_metric.hpp"
#include "reference.hpp"
#include "synthetic.hpp"

using namespace featmimic;
namespace ft = featmimic::testing;

namespace {

Tensor to_tensor(const GrayImage& g) {
  return Tensor({1, g.height, g.width}, std::vector<float>(g.pixels.begin(), g.pixels.end()));
}

GrayImage load_gray(const std::string& name) { return to_grayscale(read_pnm(ft::test_data_dir() / "ssim" / name)); }

}  // namespace

TEST_SUITE("pass_metric") {
  TEST_CASE("grayscale conversion") {
    const auto white = to_grayscale(Tensor({3, 2, 2}, 255.0f));
    for (double v : white.pixels) CHECK(v == doctest::Approx(255.0).epsilon(1e-12));
    Tensor red({3, 2, 3});
    for (std::size_t i = 0; i < 6; ++i) red[i] = 255.0f;
    for (double v : to_grayscale(red).pixels) CHECK(v == doctest::Approx(76.245).epsilon(1e-12));
    std::mt19937 rng(1);
    const auto gray = ft::random_image(rng, {1, 5, 7}, 0, 255, true);
    const auto g = to_grayscale(gray);
    CHECK(g.width == 7);
    CHECK(g.height == 5);
    for (std::size_t i = 0; i < gray.size(); ++i) CHECK(g.pixels[i] == gray[i]);
    CHECK_THROWS_AS(to_grayscale(Tensor({2, 4, 4})), std::invalid_argument);
  }

  TEST_CASE("ECC of identical images is the identity") {
    const auto img = ft::shifted_pattern(48, 0, 0);
    const auto r = ecc_align(img, img);
    CHECK_FALSE(r.fallback);
    for (std::size_t i = 0; i < 9; ++i) CHECK(r.transform.matrix[i] == doctest::Approx(MotionModel::identity(MotionKind::homography).matrix[i]).epsilon(1e-3));
    CHECK(r.aligned == img);
  }

  TEST_CASE("ECC recovers an integer shift with the translation model") {
    const auto fixed = ft::shifted_pattern(64, 0, 0);
    const auto moving = ft::shifted_pattern(64, 2, 0);
    EccConfig cfg;
    cfg.model = MotionKind::translation;
    const auto r = ecc_align(moving, fixed, cfg);
    CHECK_FALSE(r.fallback);
    CHECK(std::fabs(r.transform.translation_x() - 2.0) <= 0.1);
    CHECK(std::fabs(r.transform.translation_y()) <= 0.1);
  }

  TEST_CASE("ECC never lowers the correlation") {
    const std::vector<std::pair<const char*, const char*>> pairs = {
        {"probe_s00_00.pgm", "probe_s00_01.pgm"},
        {"probe_s03_02.pgm", "enroll_s03_07.pgm"},
        {"adv_external_x01.pgm", "enroll_s05_00.pgm"},
        {"adv_internal_s02.pgm", "probe_s09_11.pgm"},
    };
    for (const auto& [a, b] : pairs) {
      CAPTURE(a);
      const auto moving = to_grayscale(read_pnm(ft::fixture_dir() / "images" / a));
      const auto fixed = to_grayscale(read_pnm(ft::fixture_dir() / "images" / b));
      for (auto kind : {MotionKind::translation, MotionKind::affine, MotionKind::homography}) {
        EccConfig cfg;
        cfg.model = kind;
        const auto r = ecc_align(moving, fixed, cfg);
        CHECK(r.initial_correlation == doctest::Approx(correlation_coefficient(moving, fixed)));
        CHECK(r.correlation >= r.initial_correlation - 1e-12);
        CHECK(correlation_coefficient(r.aligned, fixed) == doctest::Approx(r.correlation).epsilon(1e-9));
        CHECK(r.iterations <= cfg.max_iterations);
      }
    }
  }

  TEST_CASE("ECC falls back on flat images") {
    const GrayImage flat(20, 20, 128.0);
    const auto textured = ft::shifted_pattern(20, 0, 0);
    const auto r = ecc_align(flat, textured);
    CHECK(r.fallback);
    CHECK_FALSE(r.fallback_reason.empty());
    CHECK(r.transform.is_identity());
    CHECK(r.aligned == flat);
    CHECK_THROWS_AS(ecc_align(GrayImage(20, 20, 1.0), GrayImage(21, 20, 1.0)), std::invalid_argument);
  }

  TEST_CASE("warp_image with the identity reproduces the input") {
    const auto img = ft::shifted_pattern(24, 1, 3);
    CHECK(warp_image(img, MotionModel::identity(MotionKind::affine), 24, 24) == img);
  }

  TEST_CASE("SSIM of an image with itself is exactly one") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 5; ++trial) {
      const auto g = ft::gray_of(ft::random_image(rng, {1, 23, 31}));
      CHECK(ssim(g, g) == 1.0);
    }
  }

  TEST_CASE("SSIM is symmetric and bounded") {
    std::mt19937 rng(8);
    for (int trial = 0; trial < 5; ++trial) {
      const auto a = ft::gray_of(ft::random_image(rng, {1, 16, 16}));
      const auto b = ft::gray_of(ft::random_image(rng, {1, 16, 16}));
      const double s = ssim(a, b);
      CHECK(s == doctest::Approx(ssim(b, a)).epsilon(1e-12));
      CHECK(s <= 1.0);
      CHECK(s >= -1.0);
    }
  }

  TEST_CASE("SSIM drops under a contrast stretch") {
    const auto a = ft::shifted_pattern(32, 0, 0);
    GrayImage b = a;
    for (auto& v : b.pixels) v = std::clamp(128.0 + 1.8 * (v - 128.0), 0.0, 255.0);
    CHECK(ssim(a, b) < 1.0);
    CHECK_THROWS_AS(ssim(GrayImage(10, 10, 1.0), GrayImage(10, 10, 1.0)), std::invalid_argument);
    CHECK_THROWS_AS(ssim(GrayImage(12, 12, 1.0), GrayImage(12, 13, 1.0)), std::invalid_argument);
  }

  TEST_CASE("SSIM matches the reference values on stored pairs") {
    std::ifstream in(ft::test_data_dir() / "ssim" / "reference.csv");
    std::string line;
    std::getline(in, line);
    int pairs = 0;
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      const std::string name = line.substr(0, comma);
      const double expected = std::stod(line.substr(comma + 1));
      CAPTURE(name);
      const auto a = load_gray(name + "_a.pgm");
      const auto b = load_gray(name + "_b.pgm");
      const double s = ssim(a, b);
      CHECK(std::fabs(s - expected) <= 1e-4);
      CHECK(std::fabs(s - ft::reference_ssim(a, b)) <= 1e-9);
      ++pairs;
    }
    CHECK(pairs == 20);
  }

  TEST_CASE("PASS of an image with itself is exactly one") {
    const auto x = read_pnm(ft::fixture_dir() / "images" / "probe_s04_03.pgm");
    const auto p = pass_score(x, x);
    CHECK(p.score == 1.0);
    CHECK_FALSE(p.alignment_fallback);
    CHECK(p.transform.is_identity());
  }

  TEST_CASE("PASS compensates a one pixel shift") {
    const auto original = ft::shifted_pattern(40, 0, 0);
    const auto shifted = ft::shifted_pattern(40, 1, 0);
    const auto p = pass_score(to_tensor(shifted), to_tensor(original));
    CHECK(p.score >= ssim(shifted, original));
    CHECK(p.score > 0.99);
  }

  TEST_CASE("PASS on a stored adversarial pair matches the frozen score") {
    const auto perturbed = read_pnm(ft::fixture_dir() / "golden" / "adv_external_x02__s04.pgm");
    const auto original = read_pnm(ft::fixture_dir() / "images" / "adv_external_x02.pgm");
    const auto p = pass_score(perturbed, original);
    CHECK(std::fabs(p.score - 0.921117) <= 1e-3);
  }

  TEST_CASE("perturbation norms") {
    const Tensor zero({1, 10, 10});
    auto n = perturbation_norms(zero, zero);
    CHECK(n.l2 == 0.0);
    CHECK(n.linf == 0.0);
    Tensor one_pixel = zero;
    one_pixel[37] = 22.0f;
    n = perturbation_norms(one_pixel, zero);
    CHECK(n.l2 == 22.0);
    CHECK(n.linf == 22.0);
    n = perturbation_norms(Tensor({1, 10, 10}, 101.0f), Tensor({1, 10, 10}, 100.0f));
    CHECK(n.l2 == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(n.linf == 1.0);
    CHECK_THROWS_AS(perturbation_norms(zero, Tensor({1, 10, 9})), std::invalid_argument);

    std::mt19937 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      const auto a = ft::random_image(rng, {3, 6, 6});
      const auto b = ft::random_image(rng, {3, 6, 6});
      const auto c = ft::random_image(rng, {3, 6, 6});
      CHECK(perturbation_norms(a, c).l2 <= perturbation_norms(a, b).l2 + perturbation_norms(b, c).l2 + 1e-9);
      CHECK(perturbation_norms(a, c).linf <= perturbation_norms(a, b).linf + perturbation_norms(b, c).linf + 1e-9);
    }
  }
}
