#include "featmimic/harness.hpp"

#include <algorithm>
#include <cctype>
#include <atomic>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>
#include <mutex>
#include <optional>
#include <thread>

#include "featmimic/image.hpp"
#include "featmimic/network_io.hpp"
#include "featmimic/pass_metric.hpp"

namespace featmimic {

namespace {

// A successful outcome whose perturbed image fails a fresh predicate check is
// a library bug, not a per-attack error, so it aborts the run.
class ReverificationFailure : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using nlohmann::json;

constexpr std::string_view kScenarioNames[] = {"end_to_end_softmax", "end_to_end_descriptor", "euclidean_system",
                                               "cosine_system"};

Tap parse_tap(const json& j, const Network* net) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (net) return net->named_tap(name);
    throw std::invalid_argument("named tap '" + name + "' needs a network");
  }
  return Tap{j.at("layer").get<std::string>(), tap_phase_from_string(j.value("phase", std::string("post_activation")))};
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.is_absolute() ? p : base / p;
}

std::string sanitize(std::string s) {
  for (auto& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  }
  return s;
}

}  // namespace

std::string_view to_string(Scenario s) { return kScenarioNames[static_cast<std::size_t>(s)]; }

Scenario scenario_from_string(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kScenarioNames); ++i) {
    if (kScenarioNames[i] == name) return static_cast<Scenario>(i);
  }
  throw std::invalid_argument("unknown scenario '" + std::string(name) + "'");
}

std::vector<IdentityImages> FixtureSet::enrollment_groups() const {
  std::vector<IdentityImages> groups;
  for (const auto& img : enroll) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == img.identity; });
    if (it == groups.end()) {
      groups.emplace_back(img.identity, std::vector<Tensor>{});
      it = std::prev(groups.end());
    }
    it->second.push_back(img.image);
  }
  return groups;
}

FixtureSet load_fixture_set(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error(manifest.string() + ": cannot open image manifest");
  FixtureSet set;
  const auto base = manifest.parent_path();
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    std::string split, identity, rel;
    if (!(fields >> split >> identity >> rel)) {
      throw std::runtime_error(manifest.string() + ":" + std::to_string(line_no) + ": expected 'split identity path'");
    }
    const auto path = resolve(base, rel);
    Tensor image;
    try {
      image = read_pnm(path);
    } catch (const std::exception& e) {
      throw std::runtime_error(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (split == "enroll") {
      set.enroll.push_back({identity, path, std::move(image)});
    } else if (split == "probe") {
      set.probe.push_back({identity, path, std::move(image)});
    } else if (split == "adversary_internal" || split == "adversary_external") {
      set.adversaries.push_back({identity, split == "adversary_internal", path, std::move(image)});
    } else {
      throw std::runtime_error(manifest.string() + ":" + std::to_string(line_no) + ": unknown split '" + split + "'");
    }
  }
  return set;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open config");
  try {
    const json doc = json::parse(in);
    const auto base = path.parent_path();
    ExperimentConfig cfg;
    cfg.network = resolve(base, doc.at("network").get<std::string>());
    cfg.images = resolve(base, doc.at("images").get<std::string>());
    // Named taps need the network description; load it only for that.
    std::optional<Network> net;
    auto tap_of = [&](const char* key, const char* fallback) {
      const json& j = doc.contains(key) ? doc[key] : json(fallback);
      if (j.is_string() && !net) net.emplace(load_network(cfg.network));
      return parse_tap(j, net ? &*net : nullptr);
    };
    cfg.descriptor_tap = tap_of("descriptor_tap", "descriptor");
    cfg.softmax_tap = tap_of("softmax_tap", "softmax");
    if (doc.contains("scenarios")) {
      cfg.scenarios.clear();
      for (const auto& s : doc["scenarios"]) cfg.scenarios.push_back(scenario_from_string(s.get<std::string>()));
    }
    if (doc.contains("targets") && doc["targets"].is_array()) {
      cfg.targets = doc["targets"].get<std::vector<std::string>>();
    } else if (doc.contains("targets") && doc["targets"] != "all") {
      throw std::invalid_argument("targets must be \"all\" or a list of identities");
    }
    cfg.far_target = doc.value("far_target", cfg.far_target);
    cfg.max_steps = doc.value("max_steps", cfg.max_steps);
    cfg.step_linf = doc.value("step_linf", cfg.step_linf);
    cfg.output_dir = resolve(base, doc.value("output_dir", cfg.output_dir.string()));
    cfg.jobs = doc.value("jobs", cfg.jobs);
    cfg.save_images = doc.value("save_images", cfg.save_images);
    if (!(cfg.far_target > 0.0 && cfg.far_target < 1.0)) throw std::invalid_argument("far_target must lie in (0,1)");
    if (cfg.max_steps < 1) throw std::invalid_argument("max_steps must be at least 1");
    if (cfg.jobs < 1) throw std::invalid_argument("jobs must be at least 1");
    return cfg;
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

const GalleryTemplate& Calibration::gallery_template(std::string_view identity) const {
  auto it = std::find_if(gallery.begin(), gallery.end(), [&](const auto& t) { return t.identity == identity; });
  if (it == gallery.end()) throw std::invalid_argument("no gallery template for '" + std::string(identity) + "'");
  return *it;
}

Calibration calibrate(const Network& net, const FixtureSet& fixtures, const Tap& descriptor_tap, double far_target) {
  Calibration cal;
  cal.far_target = far_target;
  cal.gallery = enroll(net, fixtures.enrollment_groups(), descriptor_tap);
  for (const auto& p : fixtures.probe) {
    cal.probes.push_back({p.identity, Descriptor::from_tensor(features(net, p.image, descriptor_tap))});
  }
  cal.euclidean_scores = score_all(cal.gallery, cal.probes, DistanceKind::euclidean);
  cal.cosine_scores = score_all(cal.gallery, cal.probes, DistanceKind::cosine);
  cal.euclidean_threshold = threshold_at_far(cal.euclidean_scores, far_target);
  cal.cosine_threshold = threshold_at_far(cal.cosine_scores, far_target);
  return cal;
}

void ScenarioConfig::validate(const Network& net) const {
  if (adversaries.empty()) throw std::invalid_argument("scenario needs at least one adversary");
  attack.validate();
  if (!(far_target > 0.0 && far_target < 1.0)) throw std::invalid_argument("far_target must lie in (0,1)");
  if (jobs < 1) throw std::invalid_argument("jobs must be at least 1");
  if (scenario == Scenario::end_to_end_softmax) {
    net.resolve(softmax_tap);
    net.num_classes();
  } else {
    net.resolve(descriptor_tap);
  }
  if (scenario == Scenario::end_to_end_softmax || scenario == Scenario::end_to_end_descriptor) {
    if (net.class_labels().empty()) throw std::invalid_argument("end-to-end scenarios need class labels");
  }
}

ScenarioConfig make_scenario_config(const ExperimentConfig& config, Scenario scenario, const FixtureSet& fixtures) {
  ScenarioConfig sc;
  sc.scenario = scenario;
  sc.adversaries = fixtures.adversaries;
  sc.targets = config.targets;
  sc.attack.max_steps = config.max_steps;
  sc.attack.step_linf = config.step_linf;
  sc.far_target = config.far_target;
  sc.descriptor_tap = config.descriptor_tap;
  sc.softmax_tap = config.softmax_tap;
  if (config.save_images) sc.image_dir = config.output_dir / "images" / std::string(to_string(scenario));
  sc.jobs = config.jobs;
  return sc;
}

ScenarioTarget scenario_target(Scenario scenario, const std::string& identity, const Network& net,
                               const Calibration& calibration, const Tap& descriptor_tap, const Tap& softmax_tap) {
  switch (scenario) {
    case Scenario::end_to_end_softmax: {
      const std::size_t label = net.class_index(identity);
      return {softmax_tap, one_hot_target(net.num_classes(), label), MimicPredicate::classified_as(label)};
    }
    case Scenario::end_to_end_descriptor:
      return {descriptor_tap, calibration.gallery_template(identity).mean_descriptor.to_tensor(),
              MimicPredicate::classified_as(net.class_index(identity))};
    case Scenario::euclidean_system:
      return {descriptor_tap, calibration.gallery_template(identity).mean_descriptor.to_tensor(),
              MimicPredicate::euclidean_below(descriptor_tap, calibration.euclidean_threshold)};
    case Scenario::cosine_system:
      return {descriptor_tap, calibration.gallery_template(identity).mean_descriptor.to_tensor(),
              MimicPredicate::cosine_below(descriptor_tap, calibration.cosine_threshold)};
  }
  throw std::logic_error("unhandled scenario");
}

std::vector<AttackRecord> run_scenario(const ScenarioConfig& config, const Network& net,
                                       const Calibration& calibration) {
  config.validate(net);
  std::vector<std::string> targets = config.targets;
  if (targets.empty()) {
    for (const auto& t : calibration.gallery) targets.push_back(t.identity);
  }
  for (const auto& t : targets) {
    calibration.gallery_template(t);
    if (config.scenario == Scenario::end_to_end_softmax || config.scenario == Scenario::end_to_end_descriptor) {
      net.class_index(t);
    }
  }

  struct Job {
    const Adversary* adversary;
    std::string target;
  };
  std::vector<Job> jobs;
  for (const auto& adv : config.adversaries) {
    for (const auto& target : targets) {
      if (adv.internal && adv.id == target) continue;
      jobs.push_back({&adv, target});
    }
  }
  if (!config.image_dir.empty()) std::filesystem::create_directories(config.image_dir);

  std::vector<AttackRecord> records(jobs.size());
  auto run_one = [&](std::size_t i) {
    const Job& job = jobs[i];
    AttackRecord& rec = records[i];
    rec.adversary = job.adversary->id;
    rec.internal = job.adversary->internal;
    rec.target = job.target;
    rec.scenario = config.scenario;
    try {
      const ScenarioTarget st =
          scenario_target(config.scenario, job.target, net, calibration, config.descriptor_tap, config.softmax_tap);
      AttackConfig attack = config.attack;
      attack.tap = st.tap;
      const AttackOutcome outcome = lots_iterative(net, job.adversary->image, st.target, st.predicate, attack);
      if (outcome.success && !st.predicate.evaluate(net, outcome.perturbed, st.target).holds) {
        throw ReverificationFailure("predicate re-verification failed for a successful attack");
      }
      rec.success = outcome.success;
      rec.status = outcome.success ? "success" : (outcome.zero_gradient_abort ? "zero_gradient" : "step_limit");
      rec.steps = outcome.steps_used;
      rec.final_distance = outcome.final_distance;
      const PassScore pass = pass_score(outcome.perturbed, job.adversary->image);
      rec.pass = pass.score;
      rec.alignment_fallback = pass.alignment_fallback;
      const auto norms = perturbation_norms(outcome.perturbed, job.adversary->image);
      rec.l2 = norms.l2;
      rec.linf = norms.linf;
      if (!config.image_dir.empty()) {
        write_pnm(config.image_dir / (sanitize(job.adversary->id) + "__" + sanitize(job.target) + ".pgm"),
                  outcome.perturbed);
      }
    } catch (const ReverificationFailure&) {
      throw;
    } catch (const std::exception&) {
      rec.success = false;
      rec.status = "error";
    }
  };

  const unsigned workers = std::min<std::size_t>(config.jobs, std::max<std::size_t>(jobs.size(), 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run_one(i);
    return records;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
          try {
            run_one(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
  return records;
}

std::vector<SummaryRow> aggregate(std::span<const AttackRecord> records) {
  if (records.empty()) throw std::invalid_argument("aggregate needs at least one record");
  std::vector<SummaryRow> rows;
  std::map<std::pair<std::size_t, Scenario>, std::vector<double>> passes;
  auto row_of = [&](const AttackRecord& r) -> std::size_t {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].adversary == r.adversary && rows[i].internal == r.internal) return i;
    }
    rows.push_back({r.adversary, r.internal, {}});
    return rows.size() - 1;
  };
  for (const auto& r : records) {
    const std::size_t i = row_of(r);
    auto& stats = rows[i].scenarios[r.scenario];
    ++stats.attempts;
    if (r.success) {
      ++stats.successes;
      passes[{i, r.scenario}].push_back(r.pass);
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (auto& [scenario, stats] : rows[i].scenarios) {
      stats.success_percentage = 100.0 * static_cast<double>(stats.successes) / static_cast<double>(stats.attempts);
      const auto it = passes.find({i, scenario});
      if (it == passes.end()) continue;
      const auto& v = it->second;
      double sum = 0.0;
      for (double p : v) sum += p;
      const double mean = sum / static_cast<double>(v.size());
      stats.pass_mean = mean;
      if (v.size() >= 2) {
        double sq = 0.0;
        for (double p : v) sq += (p - mean) * (p - mean);
        stats.pass_std = std::sqrt(sq / static_cast<double>(v.size() - 1));
      }
    }
  }
  std::stable_partition(rows.begin(), rows.end(), [](const SummaryRow& r) { return r.internal; });
  return rows;
}

}  // namespace featmimic
