#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "featmimic/network.hpp"

namespace featmimic {

/// Raw deep-feature vector extracted at a tap.
struct Descriptor {
  std::vector<float> values;

  std::size_t size() const { return values.size(); }
  Tensor to_tensor() const { return Tensor({values.size()}, values); }
  static Descriptor from_tensor(const Tensor& t) { return {t.values()}; }
  friend bool operator==(const Descriptor&, const Descriptor&) = default;
};

enum class DistanceKind { euclidean, cosine };

std::string_view to_string(DistanceKind kind);
DistanceKind distance_kind_from_string(std::string_view name);

/// euclidean: sqrt(sum (a-b)^2); cosine: 1 - a.b / (|a||b|), clamped to [0,2].
/// Rejects length mismatch and zero vectors under cosine.
double distance(std::span<const float> a, std::span<const float> b, DistanceKind kind);
inline double distance(const Descriptor& a, const Descriptor& b, DistanceKind kind) {
  return distance(a.values, b.values, kind);
}

/// Per-identity mean of raw enrollment descriptors.
struct GalleryTemplate {
  std::string identity;
  Descriptor mean_descriptor;
  std::size_t enrollment_count = 0;

  /// False for an all-zero mean, which has no cosine distance.
  bool usable_for_cosine() const;
};

using IdentityImages = std::pair<std::string, std::vector<Tensor>>;

/// One template per identity, in input order.
std::vector<GalleryTemplate> enroll(const Network& net, const std::vector<IdentityImages>& images, const Tap& tap);
/// Same, from already extracted descriptors.
std::vector<GalleryTemplate> enroll_descriptors(
    const std::vector<std::pair<std::string, std::vector<Descriptor>>>& descriptors);

struct LabeledDescriptor {
  std::string identity;
  Descriptor descriptor;
};

struct ScoreSet {
  std::vector<double> positives;
  std::vector<double> negatives;
};

/// Scores every (probe, template) pair; positive iff identities match.
ScoreSet score_all(std::span<const GalleryTemplate> gallery, std::span<const LabeledDescriptor> probes,
                   DistanceKind kind);

struct RocPoint {
  double threshold = 0.0;
  double false_accept_rate = 0.0;
  double true_accept_rate = 0.0;
};

/// Acceptance is `distance < threshold`. Thresholds are the distinct scores in
/// increasing order followed by one value just above the largest score, so the
/// curve starts at (0,0) and ends at (1,1).
struct RocCurve {
  std::vector<RocPoint> points;
};

RocCurve roc(const ScoreSet& scores);

/// Empirical FAR at a threshold: |{negatives < threshold}| / |negatives|.
double false_accept_rate(std::span<const double> negatives, double threshold);

/// Largest threshold whose empirical FAR does not exceed `far_target`.
/// Rejects unless far_target * |negatives| >= 1.
double threshold_at_far(const ScoreSet& scores, double far_target);

/// Accept iff distance(probe, template) < threshold (strict).
bool verify(const Descriptor& probe, const GalleryTemplate& gallery_template, double threshold, DistanceKind kind);

// Descriptor files: little-endian uint32 vector length, uint32 count, then
// count*length float32 values. Labels live in a sidecar text manifest.

void write_descriptors(const std::filesystem::path& path, std::span<const Descriptor> descriptors);
std::vector<Descriptor> read_descriptors(const std::filesystem::path& path);

/// Gallery: descriptor file plus a manifest of "identity enrollment_count" lines.
void write_gallery(const std::filesystem::path& blob, const std::filesystem::path& manifest,
                   std::span<const GalleryTemplate> gallery);
std::vector<GalleryTemplate> read_gallery(const std::filesystem::path& blob, const std::filesystem::path& manifest);

/// Probe descriptors plus a manifest with one identity per line.
void write_labeled_descriptors(const std::filesystem::path& blob, const std::filesystem::path& manifest,
                               std::span<const LabeledDescriptor> probes);
std::vector<LabeledDescriptor> read_labeled_descriptors(const std::filesystem::path& blob,
                                                        const std::filesystem::path& manifest);

}  // namespace featmimic
