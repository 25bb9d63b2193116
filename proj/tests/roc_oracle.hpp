#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <vector>

#include "featmimic/verification.hpp"

namespace featmimic::testing {

/// Brute-force ROC: every distinct score plus one value above the maximum,
/// each rate counted directly.
inline RocCurve brute_force_roc(const ScoreSet& s) {
  std::set<double> candidates(s.positives.begin(), s.positives.end());
  candidates.insert(s.negatives.begin(), s.negatives.end());
  candidates.insert(std::nextafter(*candidates.rbegin(), HUGE_VAL));
  RocCurve curve;
  for (double t : candidates) {
    std::size_t fa = 0, ta = 0;
    for (double n : s.negatives) fa += n < t;
    for (double p : s.positives) ta += p < t;
    curve.points.push_back({t, double(fa) / double(s.negatives.size()), double(ta) / double(s.positives.size())});
  }
  return curve;
}

/// Largest candidate threshold whose FAR does not exceed the target.
inline std::optional<double> brute_force_threshold(const ScoreSet& s, double far) {
  std::optional<double> best;
  for (const auto& p : brute_force_roc(s).points) {
    if (p.false_accept_rate <= far) best = p.threshold;
  }
  return best;
}

}  // namespace featmimic::testing
