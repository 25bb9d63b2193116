#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "featmimic/lots.hpp"
#include "featmimic/network.hpp"
#include "featmimic/verification.hpp"

namespace featmimic {

/// The four attack settings: softmax one-hot targets and descriptor templates
/// against the end-to-end classifier, and descriptor templates against
/// Euclidean and cosine verification systems.
enum class Scenario { end_to_end_softmax, end_to_end_descriptor, euclidean_system, cosine_system };

inline constexpr Scenario kAllScenarios[] = {Scenario::end_to_end_softmax, Scenario::end_to_end_descriptor,
                                             Scenario::euclidean_system, Scenario::cosine_system};

std::string_view to_string(Scenario s);
Scenario scenario_from_string(std::string_view name);

struct LabeledImage {
  std::string identity;
  std::filesystem::path path;
  Tensor image;
};

/// Internal adversaries belong to an enrolled identity; external ones do not.
struct Adversary {
  std::string id;
  bool internal = false;
  std::filesystem::path path;
  Tensor image;
};

struct FixtureSet {
  std::vector<LabeledImage> enroll;
  std::vector<LabeledImage> probe;
  std::vector<Adversary> adversaries;

  /// Enrollment images grouped by identity in first-seen order.
  std::vector<IdentityImages> enrollment_groups() const;
};

/// Reads an image manifest of "split identity path" lines, where split is one
/// of enroll, probe, adversary_internal, adversary_external and paths are
/// relative to the manifest.
FixtureSet load_fixture_set(const std::filesystem::path& manifest);

/// Experiment configuration file (JSON, see docs/formats.md). Relative paths
/// resolve against the file's directory.
struct ExperimentConfig {
  std::filesystem::path network;
  std::filesystem::path images;
  Tap descriptor_tap;
  Tap softmax_tap;
  std::vector<Scenario> scenarios{std::begin(kAllScenarios), std::end(kAllScenarios)};
  std::vector<std::string> targets;  // empty: every gallery identity
  double far_target = 0.001;
  std::size_t max_steps = 500;
  double step_linf = 1.0;
  std::filesystem::path output_dir = "out";
  unsigned jobs = 1;
  bool save_images = true;

  static ExperimentConfig load(const std::filesystem::path& path);
};

/// Gallery templates, probe scores and FAR-calibrated thresholds.
struct Calibration {
  std::vector<GalleryTemplate> gallery;
  std::vector<LabeledDescriptor> probes;
  ScoreSet euclidean_scores;
  ScoreSet cosine_scores;
  double far_target = 0.001;
  double euclidean_threshold = 0.0;
  double cosine_threshold = 0.0;

  const GalleryTemplate& gallery_template(std::string_view identity) const;
  double threshold(DistanceKind kind) const {
    return kind == DistanceKind::euclidean ? euclidean_threshold : cosine_threshold;
  }
};

Calibration calibrate(const Network& net, const FixtureSet& fixtures, const Tap& descriptor_tap, double far_target);

struct ScenarioConfig {
  Scenario scenario = Scenario::euclidean_system;
  std::vector<Adversary> adversaries;
  std::vector<std::string> targets;  // empty: every gallery identity
  AttackConfig attack;               // attack.tap is chosen per scenario by run_scenario
  double far_target = 0.001;
  Tap descriptor_tap;
  Tap softmax_tap;
  std::filesystem::path image_dir;   // empty: perturbed images are not persisted
  unsigned jobs = 1;

  void validate(const Network& net) const;
};

ScenarioConfig make_scenario_config(const ExperimentConfig& config, Scenario scenario, const FixtureSet& fixtures);

struct AttackRecord {
  std::string adversary;
  bool internal = false;
  std::string target;
  Scenario scenario = Scenario::euclidean_system;
  bool success = false;
  /// success, step_limit, zero_gradient, or error.
  std::string status;
  std::size_t steps = 0;
  double pass = 0.0;
  bool alignment_fallback = false;
  double l2 = 0.0;
  double linf = 0.0;
  double final_distance = 0.0;

  friend bool operator==(const AttackRecord&, const AttackRecord&) = default;
};

/// Target representation and success predicate for one (scenario, target identity).
struct ScenarioTarget {
  Tap tap;
  Tensor target;
  MimicPredicate predicate;
};

ScenarioTarget scenario_target(Scenario scenario, const std::string& identity, const Network& net,
                               const Calibration& calibration, const Tap& descriptor_tap, const Tap& softmax_tap);

/// Attacks every (adversary, eligible target) pair with iterative LOTS.
/// Records come back in adversary-major, target-minor order regardless of
/// the number of worker threads.
std::vector<AttackRecord> run_scenario(const ScenarioConfig& config, const Network& net,
                                       const Calibration& calibration);

struct ScenarioStats {
  std::size_t attempts = 0;
  std::size_t successes = 0;
  double success_percentage = 0.0;
  /// Over successful attempts only; std needs at least two.
  std::optional<double> pass_mean;
  std::optional<double> pass_std;
};

struct SummaryRow {
  std::string adversary;
  bool internal = false;
  std::map<Scenario, ScenarioStats> scenarios;
};

/// One row per adversary: internal adversaries first, then external, each in
/// first-seen order.
std::vector<SummaryRow> aggregate(std::span<const AttackRecord> records);

}  // namespace featmimic
