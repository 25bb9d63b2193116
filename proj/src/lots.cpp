#include "featmimic/lots.hpp"

#include <cmath>
#include <stdexcept>

namespace featmimic {

namespace {

void check_origin(const Network& net, const Tensor& origin, const PixelDomain& domain) {
  if (origin.shape() != net.input_shape()) {
    throw std::invalid_argument("origin shape " + shape_string(origin.shape()) + " does not match network input " +
                                shape_string(net.input_shape()));
  }
  for (float v : origin.data()) {
    if (!domain.contains(v) || std::round(v) != v) {
      throw std::invalid_argument("origin pixels must be integers inside the pixel domain");
    }
  }
}

// round(clip(x - scale * direction)), elementwise.
Tensor discretize_step(const Tensor& x, const Tensor& direction, double scale, const PixelDomain& domain) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto moved = static_cast<float>(static_cast<double>(x[i]) - scale * static_cast<double>(direction[i]));
    out[i] = std::round(domain.clip(moved));
  }
  return out;
}

double outcome_distance(const Network& net, const Tensor& image, const Tap& tap, const Tensor& target,
                        const MimicPredicate& predicate) {
  if (predicate.kind() != MimicPredicate::Kind::classified_as) return predicate.evaluate(net, image, target).value;
  const Tensor f = features(net, image, tap);
  return distance(f.data(), target.data(), DistanceKind::euclidean);
}

}  // namespace

MimicPredicate::MimicPredicate(Kind kind, Tap tap, double threshold, std::size_t label)
    : kind_(kind), tap_(std::move(tap)), threshold_(threshold), label_(label) {}

MimicPredicate MimicPredicate::euclidean_below(Tap tap, double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("distance threshold must be positive");
  return MimicPredicate(Kind::euclidean_below, std::move(tap), threshold, 0);
}

MimicPredicate MimicPredicate::cosine_below(Tap tap, double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("distance threshold must be positive");
  return MimicPredicate(Kind::cosine_below, std::move(tap), threshold, 0);
}

MimicPredicate MimicPredicate::classified_as(std::size_t label) {
  return MimicPredicate(Kind::classified_as, Tap{}, 0.0, label);
}

void MimicPredicate::validate(const Network& net) const {
  if (kind_ == Kind::classified_as) {
    if (label_ >= net.num_classes()) {
      throw std::invalid_argument("target label " + std::to_string(label_) + " out of range for " +
                                  std::to_string(net.num_classes()) + " classes");
    }
  } else {
    net.resolve(tap_);
  }
}

MimicPredicate::Check MimicPredicate::evaluate(const Network& net, const Tensor& x, const Tensor& target) const {
  if (kind_ == Kind::classified_as) {
    const auto c = classify(net, x);
    return {c.label == label_, static_cast<double>(c.probabilities[label_])};
  }
  const Tensor f = features(net, x, tap_);
  if (f.size() != target.size()) throw std::invalid_argument("predicate target does not match tap width");
  const auto kind = kind_ == Kind::euclidean_below ? DistanceKind::euclidean : DistanceKind::cosine;
  if (kind == DistanceKind::cosine && f.max_abs() == 0.0f) {
    // No direction to compare; counts as orthogonal.
    return {1.0 < threshold_, 1.0};
  }
  const double d = distance(f.data(), target.data(), kind);
  return {d < threshold_, d};
}

void AttackConfig::validate() const {
  if (max_steps < 1) throw std::invalid_argument("max_steps must be at least 1");
  if (!(step_linf > 0.0)) throw std::invalid_argument("step_linf must be positive");
  if (!(pixel_domain.lo < pixel_domain.hi)) throw std::invalid_argument("pixel domain must satisfy lo < hi");
}

Tensor lots_direction(const Network& net, const Tensor& x, const Tap& tap, const Tensor& target) {
  Tensor g = grad_input(net, x, tap, target);
  const float peak = g.max_abs();
  if (peak == 0.0f) throw ZeroGradient("LOTS gradient vanished at tap " + to_string(tap));
  for (auto& v : g.data()) v /= peak;
  return g;
}

AttackOutcome lots_single(const Network& net, const Tensor& origin, const Tap& tap, const Tensor& target,
                          const MimicPredicate& predicate, double max_scale) {
  if (!(max_scale > 0.0)) throw std::invalid_argument("max_scale must be positive");
  predicate.validate(net);
  const auto& domain = net.pixel_domain();
  check_origin(net, origin, domain);

  AttackOutcome out;
  out.origin = origin;
  out.perturbed = origin;
  if (predicate.evaluate(net, origin, target).holds) {
    out.success = true;
    out.final_distance = outcome_distance(net, origin, tap, target, predicate);
    return out;
  }

  Tensor direction;
  try {
    direction = lots_direction(net, origin, tap, target);
  } catch (const ZeroGradient&) {
    out.zero_gradient_abort = true;
    out.final_distance = outcome_distance(net, origin, tap, target, predicate);
    return out;
  }
  out.steps_used = 1;

  Tensor best = discretize_step(origin, direction, max_scale, domain);
  if (!predicate.evaluate(net, best, target).holds) {
    out.perturbed = std::move(best);
    out.line_search_scale = max_scale;
    out.final_distance = outcome_distance(net, out.perturbed, tap, target, predicate);
    return out;
  }
  // Invariant: the candidate at `lo` fails, the one at `hi` holds.
  double lo = 0.0, hi = max_scale;
  for (int i = 0; i < 20; ++i) {
    const double mid = 0.5 * (lo + hi);
    Tensor candidate = discretize_step(origin, direction, mid, domain);
    if (predicate.evaluate(net, candidate, target).holds) {
      hi = mid;
      best = std::move(candidate);
    } else {
      lo = mid;
    }
  }
  out.perturbed = std::move(best);
  out.success = true;
  out.line_search_scale = hi;
  out.final_distance = outcome_distance(net, out.perturbed, tap, target, predicate);
  return out;
}

AttackOutcome lots_iterative(const Network& net, const Tensor& origin, const Tensor& target,
                             const MimicPredicate& predicate, const AttackConfig& config,
                             const StepObserver& observer) {
  config.validate();
  predicate.validate(net);
  const auto& domain = config.pixel_domain;
  if (domain.lo < net.pixel_domain().lo || domain.hi > net.pixel_domain().hi) {
    throw std::invalid_argument("attack pixel domain exceeds the network's pixel domain");
  }
  check_origin(net, origin, domain);

  AttackOutcome out;
  out.origin = origin;
  Tensor rounded = origin;
  Tensor continuous = origin;
  const auto step = static_cast<float>(config.step_linf);

  for (;;) {
    if (predicate.evaluate(net, rounded, target).holds) {
      out.success = true;
      break;
    }
    if (out.steps_used == config.max_steps) break;
    Tensor direction;
    try {
      direction = lots_direction(net, continuous, config.tap, target);
    } catch (const ZeroGradient&) {
      out.zero_gradient_abort = true;
      break;
    }
    Tensor next(continuous.shape());
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] = domain.clip(continuous[i] - step * direction[i]);
      rounded[i] = std::round(next[i]);
    }
    ++out.steps_used;
    if (observer) observer(StepRecord{out.steps_used, &continuous, &next, &rounded});
    continuous = std::move(next);
  }

  out.final_distance = outcome_distance(net, rounded, config.tap, target, predicate);
  out.perturbed = std::move(rounded);
  return out;
}

Tensor one_hot_target(std::size_t num_classes, std::size_t idx) {
  if (idx >= num_classes) {
    throw std::invalid_argument("one-hot index " + std::to_string(idx) + " out of range for " +
                                std::to_string(num_classes) + " classes");
  }
  Tensor t({num_classes});
  t[idx] = 1.0f;
  return t;
}

}  // namespace featmimic
