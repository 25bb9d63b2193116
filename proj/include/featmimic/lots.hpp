#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>

#include "featmimic/network.hpp"
#include "featmimic/verification.hpp"

namespace featmimic {

/// Signals that the layer loss gradient vanished at the current input, so no
/// LOTS direction exists (loss minimum or a dead relu region).
class ZeroGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// When an attack counts as successful. Distance predicates compare the tap
/// features of the candidate with the target and accept strictly below the
/// threshold; classified_as accepts when the softmax argmax equals the label.
class MimicPredicate {
 public:
  enum class Kind { euclidean_below, cosine_below, classified_as };

  static MimicPredicate euclidean_below(Tap tap, double threshold);
  static MimicPredicate cosine_below(Tap tap, double threshold);
  static MimicPredicate classified_as(std::size_t label);

  Kind kind() const { return kind_; }
  double threshold() const { return threshold_; }
  std::size_t target_label() const { return label_; }
  const Tap& tap() const { return tap_; }

  struct Check {
    bool holds = false;
    /// Predicate distance for distance kinds; target probability for classified_as.
    double value = 0.0;
  };

  /// Fresh forward evaluation on `x`. `target` is used by distance kinds only.
  Check evaluate(const Network& net, const Tensor& x, const Tensor& target) const;

  /// Rejects predicates that do not fit the network (unknown tap, label out of range).
  void validate(const Network& net) const;

 private:
  MimicPredicate(Kind kind, Tap tap, double threshold, std::size_t label);

  Kind kind_;
  Tap tap_;
  double threshold_ = 0.0;
  std::size_t label_ = 0;
};

struct AttackConfig {
  Tap tap;
  std::size_t max_steps = 500;
  double step_linf = 1.0;
  PixelDomain pixel_domain{};

  void validate() const;
};

struct AttackOutcome {
  Tensor perturbed;
  Tensor origin;
  std::size_t steps_used = 0;
  bool success = false;
  /// Set when the run stopped early because the gradient vanished.
  bool zero_gradient_abort = false;
  /// Predicate distance of `perturbed` for distance predicates; Euclidean
  /// feature distance to the target at the attack tap for classified_as.
  double final_distance = 0.0;
  /// Scale chosen by the single-step line search (0 when unused or x_o already succeeds).
  double line_search_scale = 0.0;
};

/// Per-step observation passed to lots_iterative's optional observer.
struct StepRecord {
  std::size_t step = 0;        // 1-based index of the completed update
  const Tensor* previous = nullptr;  // continuous working image before the update
  const Tensor* continuous = nullptr;  // continuous working image after the update
  const Tensor* rounded = nullptr;     // rounded image the predicate will see
};

using StepObserver = std::function<void(const StepRecord&)>;

/// LOTS direction: input gradient of the tap loss scaled so its largest
/// magnitude component is exactly 1. Throws ZeroGradient.
Tensor lots_direction(const Network& net, const Tensor& x, const Tap& tap, const Tensor& target);

/// Line search along the LOTS direction at x_o: binary search (20 halvings)
/// for the smallest scale in (0, max_scale] whose rounded, clipped candidate
/// satisfies the predicate. Fails if max_scale itself does not.
AttackOutcome lots_single(const Network& net, const Tensor& origin, const Tap& tap, const Tensor& target,
                          const MimicPredicate& predicate, double max_scale);

/// Iterative LOTS. The predicate is checked on the rounded image before each
/// update; updates take the direction at the continuous working copy, clip to
/// the pixel domain and round half away from zero.
AttackOutcome lots_iterative(const Network& net, const Tensor& origin, const Tensor& target,
                             const MimicPredicate& predicate, const AttackConfig& config,
                             const StepObserver& observer = {});

/// Zero vector of length num_classes with a 1 at idx.
Tensor one_hot_target(std::size_t num_classes, std::size_t idx);

}  // namespace featmimic
