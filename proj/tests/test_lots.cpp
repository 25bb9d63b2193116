#include <doctest.h>

#include <cmath>
#include <random>

#include "featmimic/image.hpp"
#include "featmimic/lots.hpp"
#include "reference.hpp"

using namespace featmimic;
using featmimic::testing::toy_net;

namespace {

// f(x) = x on two pixels; the LOTS gradient is simply f - t.
const Network& identity_net() {
  static const Network net({LayerSpec{"fc", layers::Dense{2, {1, 0, 0, 1}, {0, 0}}}}, {2});
  return net;
}

const Tap kFc{"fc"};
const Tap kDescriptor{"fc1", TapPhase::pre_activation};
const Tap kSoftmax{"prob"};

Tensor fixture_image(const char* name) {
  return read_pnm(featmimic::testing::fixture_dir() / "images" / name);
}

AttackConfig config_for(const Tap& tap, std::size_t steps = 500, double step = 1.0) {
  AttackConfig c;
  c.tap = tap;
  c.max_steps = steps;
  c.step_linf = step;
  return c;
}

}  // namespace

TEST_SUITE("lots_attack") {
  TEST_CASE("direction is the gradient scaled to unit peak magnitude") {
    // grad = f - t = (10-8, 10-14)
    const auto d = lots_direction(identity_net(), Tensor({2}, {10, 10}), kFc, Tensor({2}, {8, 14}));
    CHECK(d == Tensor({2}, {0.5f, -1.0f}));
  }

  TEST_CASE("direction at the target raises ZeroGradient") {
    CHECK_THROWS_AS(lots_direction(identity_net(), Tensor({2}, {10, 10}), kFc, Tensor({2}, {10, 10})), ZeroGradient);
  }

  TEST_CASE("direction on the bundled network has unit peak") {
    std::mt19937 rng(21);
    const auto target = features(toy_net(), fixture_image("enroll_s04_00.pgm"), kDescriptor);
    for (int trial = 0; trial < 5; ++trial) {
      const auto x = featmimic::testing::random_image(rng, toy_net().input_shape());
      CHECK(lots_direction(toy_net(), x, kDescriptor, target).max_abs() == 1.0f);
    }
  }

  TEST_CASE("single step: already satisfied origin needs no perturbation") {
    const Tensor x({2}, {100, 100});
    const auto out = lots_single(identity_net(), x, kFc, Tensor({2}, {101, 100}),
                                 MimicPredicate::euclidean_below(kFc, 5), 20.0);
    CHECK(out.success);
    CHECK(out.line_search_scale == 0.0);
    CHECK(out.perturbed == x);
    CHECK(out.steps_used == 0);
  }

  TEST_CASE("single step: line search finds the smallest working scale") {
    // Direction is (-1, 0); distance drops below 5 once the first pixel rounds to 106.
    const auto out = lots_single(identity_net(), Tensor({2}, {100, 100}), kFc, Tensor({2}, {110, 100}),
                                 MimicPredicate::euclidean_below(kFc, 5), 12.0);
    CHECK(out.success);
    CHECK(out.perturbed == Tensor({2}, {106, 100}));
    CHECK(out.line_search_scale >= 5.5 - 1e-5);
    CHECK(out.line_search_scale <= 5.5 + 12.0 / (1 << 19));
    CHECK(out.final_distance == doctest::Approx(4.0));
  }

  TEST_CASE("single step: overshooting maximum scale fails") {
    // At scale 20 the first pixel lands on 120, still 10 away from the target.
    const auto out = lots_single(identity_net(), Tensor({2}, {100, 100}), kFc, Tensor({2}, {110, 100}),
                                 MimicPredicate::euclidean_below(kFc, 5), 20.0);
    CHECK_FALSE(out.success);
    CHECK(out.line_search_scale == 20.0);
  }

  TEST_CASE("single step: too small a scale fails honestly") {
    const MimicPredicate pred = MimicPredicate::euclidean_below(kFc, 5);
    const auto out =
        lots_single(identity_net(), Tensor({2}, {100, 100}), kFc, Tensor({2}, {110, 100}), pred, 3.0);
    CHECK_FALSE(out.success);
    CHECK(out.perturbed == Tensor({2}, {103, 100}));
    CHECK_FALSE(pred.evaluate(identity_net(), out.perturbed, Tensor({2}, {110, 100})).holds);
  }

  TEST_CASE("iterative: already satisfied origin uses zero steps") {
    const auto x = fixture_image("probe_s02_03.pgm");
    const auto target = features(toy_net(), x, kDescriptor);
    const auto out = lots_iterative(toy_net(), x, target, MimicPredicate::euclidean_below(kDescriptor, 1.0),
                                    config_for(kDescriptor));
    CHECK(out.success);
    CHECK(out.steps_used == 0);
    CHECK(out.perturbed == x);
    CHECK(out.final_distance == 0.0);
  }

  TEST_CASE("iterative: unit steps walk straight to the target") {
    const auto out = lots_iterative(identity_net(), Tensor({2}, {100, 100}), Tensor({2}, {110, 100}),
                                    MimicPredicate::euclidean_below(kFc, 5), config_for(kFc));
    CHECK(out.success);
    CHECK(out.steps_used == 6);
    CHECK(out.perturbed == Tensor({2}, {106, 100}));
  }

  TEST_CASE("iterative: half steps round half away from zero") {
    std::vector<float> seen;
    const auto out = lots_iterative(
        identity_net(), Tensor({2}, {100, 100}), Tensor({2}, {110, 100}), MimicPredicate::euclidean_below(kFc, 9.2),
        config_for(kFc, 500, 0.5), [&](const StepRecord& r) { seen.push_back((*r.rounded)[0]); });
    CHECK(out.success);
    // continuous 100.5 -> 101 already satisfies |110 - 101| = 9 < 9.2
    REQUIRE(seen.size() == 1);
    CHECK(seen[0] == 101.0f);
    CHECK(out.steps_used == 1);
  }

  TEST_CASE("iterative: clipping at the pixel domain and step limit") {
    const MimicPredicate pred = MimicPredicate::euclidean_below(kFc, 1);
    const Tensor target({2}, {400, -60});
    const auto out = lots_iterative(identity_net(), Tensor({2}, {250, 3}), target, pred, config_for(kFc, 10));
    CHECK_FALSE(out.success);
    CHECK_FALSE(out.zero_gradient_abort);
    CHECK(out.steps_used == 10);
    CHECK(out.perturbed == Tensor({2}, {255, 0}));
    CHECK(out.final_distance == doctest::Approx(std::hypot(145.0, 60.0)));
  }

  TEST_CASE("iterative: dead units abort with zero gradient") {
    const Network dead({LayerSpec{"fc", layers::Dense{1, {1, 1}, {-1000}}}, LayerSpec{"act", layers::Relu{}}}, {2});
    const auto out = lots_iterative(dead, Tensor({2}, {5, 5}), Tensor({1}, {3}),
                                    MimicPredicate::euclidean_below(kFc, 1), config_for(kFc));
    CHECK_FALSE(out.success);
    CHECK(out.zero_gradient_abort);
    CHECK(out.steps_used == 0);
  }

  TEST_CASE("iterative: rejects non-integral or out-of-domain origins") {
    const MimicPredicate pred = MimicPredicate::euclidean_below(kFc, 1);
    CHECK_THROWS_AS(lots_iterative(identity_net(), Tensor({2}, {1.5f, 3}), Tensor({2}), pred, config_for(kFc)),
                    std::invalid_argument);
    CHECK_THROWS_AS(lots_iterative(identity_net(), Tensor({2}, {256, 3}), Tensor({2}), pred, config_for(kFc)),
                    std::invalid_argument);
    CHECK_THROWS_AS(lots_iterative(identity_net(), Tensor({2}, {1, 3}), Tensor({2}), pred, config_for(kFc, 0)),
                    std::invalid_argument);
    CHECK_THROWS_AS(MimicPredicate::euclidean_below(kFc, 0.0), std::invalid_argument);
  }

  TEST_CASE("iterative attack invariants on the bundled network") {
    const auto& net = toy_net();
    const std::vector<std::pair<const char*, const char*>> pairs = {
        {"adv_external_x00.pgm", "enroll_s03_00.pgm"},
        {"adv_external_x02.pgm", "enroll_s07_05.pgm"},
        {"probe_s01_04.pgm", "enroll_s05_02.pgm"},
    };
    for (const auto& [source, target_name] : pairs) {
      CAPTURE(source);
      const auto origin = fixture_image(source);
      const auto target = features(net, fixture_image(target_name), kDescriptor);
      const auto pred = MimicPredicate::euclidean_below(kDescriptor, 4.0);
      const auto cfg = config_for(kDescriptor, 300);
      bool bounded = true;
      const auto out = lots_iterative(net, origin, target, pred, cfg, [&](const StepRecord& r) {
        for (std::size_t i = 0; i < r.continuous->size(); ++i) {
          bounded &= std::fabs((*r.continuous)[i] - (*r.previous)[i]) <= cfg.step_linf + 1e-4;
        }
      });
      CHECK(bounded);
      for (float v : out.perturbed.data()) {
        CHECK(v == std::round(v));
        CHECK(cfg.pixel_domain.contains(v));
      }
      const auto check = pred.evaluate(net, out.perturbed, target);
      CHECK(check.holds == out.success);
      CHECK(check.value == doctest::Approx(out.final_distance));
      if (out.success) {
        const auto again = lots_iterative(net, out.perturbed, target, pred, cfg);
        CHECK(again.steps_used == 0);
        CHECK(again.perturbed == out.perturbed);
      } else {
        CHECK((out.steps_used == cfg.max_steps || out.zero_gradient_abort));
      }
      CHECK(lots_iterative(net, origin, target, pred, cfg).perturbed == out.perturbed);
    }
  }

  TEST_CASE("iterative: softmax attack reaches the requested class") {
    const auto& net = toy_net();
    const auto origin = fixture_image("adv_external_x01.pgm");
    const std::size_t label = net.class_index("s06");
    const auto out = lots_iterative(net, origin, one_hot_target(net.num_classes(), label),
                                    MimicPredicate::classified_as(label), config_for(kSoftmax));
    REQUIRE(out.success);
    CHECK(classify(net, out.perturbed).label == label);
    CHECK(out.steps_used >= 1);
  }

  TEST_CASE("iterative: cosine predicate") {
    const auto& net = toy_net();
    const auto target = features(net, fixture_image("enroll_s08_01.pgm"), kDescriptor);
    const auto pred = MimicPredicate::cosine_below(kDescriptor, 0.1);
    const auto out = lots_iterative(net, fixture_image("adv_external_x03.pgm"), target, pred, config_for(kDescriptor));
    REQUIRE(out.success);
    CHECK(out.final_distance < 0.1);
    CHECK(distance(features(net, out.perturbed, kDescriptor).data(), target.data(), DistanceKind::cosine) < 0.1);
  }

  TEST_CASE("classified_as predicate validates the label") {
    CHECK_THROWS_AS(MimicPredicate::classified_as(10).validate(toy_net()), std::invalid_argument);
    CHECK_NOTHROW(MimicPredicate::classified_as(9).validate(toy_net()));
  }

  TEST_CASE("one_hot_target") {
    CHECK(one_hot_target(3, 1) == Tensor({3}, {0, 1, 0}));
    CHECK(one_hot_target(1, 0) == Tensor({1}, {1}));
    CHECK_THROWS_AS(one_hot_target(3, 3), std::invalid_argument);
  }
}
