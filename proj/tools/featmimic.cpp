// Command-line driver: calibration, attack sweeps, reports, PASS scoring and
// one-off verification against the bundled or user-supplied fixtures.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "featmimic/harness.hpp"
#include "featmimic/image.hpp"
#include "featmimic/network_io.hpp"
#include "featmimic/pass_metric.hpp"
#include "featmimic/report.hpp"

namespace fm = featmimic;
namespace fs = std::filesystem;

namespace {

void write_roc(const fs::path& path, const fm::RocCurve& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot write ROC");
  out << "threshold,far,tar\n";
  for (const auto& p : curve.points) {
    out << fm::format_real(p.threshold) << ',' << fm::format_real(p.false_accept_rate) << ','
        << fm::format_real(p.true_accept_rate) << '\n';
  }
}

struct Loaded {
  fm::ExperimentConfig config;
  fm::Network net;
  fm::FixtureSet fixtures;
};

Loaded load_all(const fs::path& config_path) {
  auto config = fm::ExperimentConfig::load(config_path);
  auto net = fm::load_network(config.network);
  auto fixtures = fm::load_fixture_set(config.images);
  return {std::move(config), std::move(net), std::move(fixtures)};
}

int run_calibrate(const fs::path& config_path, const std::string& out_override) {
  const auto loaded = load_all(config_path);
  const fs::path out = out_override.empty() ? loaded.config.output_dir : fs::path(out_override);
  fs::create_directories(out);
  const auto cal = fm::calibrate(loaded.net, loaded.fixtures, loaded.config.descriptor_tap, loaded.config.far_target);
  write_roc(out / "roc_euclidean.csv", fm::roc(cal.euclidean_scores));
  write_roc(out / "roc_cosine.csv", fm::roc(cal.cosine_scores));
  fm::write_gallery(out / "gallery.bin", out / "gallery.txt", cal.gallery);
  fm::write_labeled_descriptors(out / "probes.bin", out / "probes.txt", cal.probes);
  nlohmann::ordered_json thresholds = {
      {"far_target", cal.far_target},
      {"euclidean", cal.euclidean_threshold},
      {"cosine", cal.cosine_threshold},
      {"positives", cal.euclidean_scores.positives.size()},
      {"negatives", cal.euclidean_scores.negatives.size()},
  };
  std::ofstream(out / "thresholds.json") << thresholds.dump(2) << '\n';
  std::printf("gallery: %zu templates, %zu probes\n", cal.gallery.size(), cal.probes.size());
  std::printf("threshold at FAR %g: euclidean %.6g, cosine %.6g\n", cal.far_target, cal.euclidean_threshold,
              cal.cosine_threshold);
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

int run_attack(const fs::path& config_path, const std::vector<std::string>& scenario_names,
               const std::string& out_override, std::size_t max_steps, unsigned jobs, const std::string& format) {
  auto loaded = load_all(config_path);
  auto& config = loaded.config;
  if (!out_override.empty()) config.output_dir = out_override;
  if (max_steps > 0) config.max_steps = max_steps;
  if (jobs > 0) config.jobs = jobs;
  if (!scenario_names.empty() && !(scenario_names.size() == 1 && scenario_names[0] == "all")) {
    config.scenarios.clear();
    for (const auto& name : scenario_names) config.scenarios.push_back(fm::scenario_from_string(name));
  }

  const auto cal = fm::calibrate(loaded.net, loaded.fixtures, config.descriptor_tap, config.far_target);
  std::printf("calibrated thresholds at FAR %g: euclidean %.6g, cosine %.6g\n", cal.far_target,
              cal.euclidean_threshold, cal.cosine_threshold);
  std::vector<fm::AttackRecord> records;
  for (fm::Scenario s : config.scenarios) {
    const auto sc = fm::make_scenario_config(config, s, loaded.fixtures);
    auto part = fm::run_scenario(sc, loaded.net, cal);
    std::size_t ok = 0;
    for (const auto& r : part) ok += r.success;
    std::printf("%-22s %zu/%zu successful\n", std::string(fm::to_string(s)).c_str(), ok, part.size());
    records.insert(records.end(), part.begin(), part.end());
  }
  const auto rows = fm::aggregate(records);
  if (format == "csv" || format == "both") fm::export_report(rows, records, fm::ReportFormat::csv, config.output_dir);
  if (format == "jsonl" || format == "both") {
    fm::export_report(rows, records, fm::ReportFormat::jsonl, config.output_dir);
  }
  std::cout << '\n' << fm::format_summary_table(rows);
  std::printf("\nwrote %s\n", config.output_dir.string().c_str());
  return 0;
}

int run_report(const std::vector<std::string>& inputs, const std::string& out, const std::string& format) {
  std::vector<fm::AttackRecord> records;
  for (const auto& in : inputs) {
    auto part = fm::read_records(in);
    records.insert(records.end(), part.begin(), part.end());
  }
  const auto rows = fm::aggregate(records);
  if (!out.empty()) fm::export_report(rows, records, fm::report_format_from_string(format), out);
  std::cout << fm::format_summary_table(rows);
  return 0;
}

int run_pass(const fs::path& perturbed, const fs::path& original, const std::string& model) {
  const auto xp = fm::read_pnm(perturbed);
  const auto xo = fm::read_pnm(original);
  fm::EccConfig ecc;
  ecc.model = fm::motion_kind_from_string(model);
  const auto score = fm::pass_score(xp, xo, ecc);
  const auto norms = fm::perturbation_norms(xp, xo);
  std::printf("PASS %.6f\nL2 %.6g\nLinf %.6g\nalignment_fallback %s\n", score.score, norms.l2, norms.linf,
              score.alignment_fallback ? "true" : "false");
  return 0;
}

int run_verify(const fs::path& config_path, const fs::path& probe_path, const std::string& identity,
               const std::string& kind_name, double threshold) {
  const auto loaded = load_all(config_path);
  const auto kind = fm::distance_kind_from_string(kind_name);
  const auto cal = fm::calibrate(loaded.net, loaded.fixtures, loaded.config.descriptor_tap, loaded.config.far_target);
  if (threshold <= 0.0) threshold = cal.threshold(kind);
  const auto probe =
      fm::Descriptor::from_tensor(fm::features(loaded.net, fm::read_pnm(probe_path), loaded.config.descriptor_tap));
  const auto& templ = cal.gallery_template(identity);
  const double d = fm::distance(probe, templ.mean_descriptor, kind);
  const bool accept = fm::verify(probe, templ, threshold, kind);
  std::printf("%s distance %.6g threshold %.6g -> %s\n", kind_name.c_str(), d, threshold,
              accept ? "accept" : "reject");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep-feature mimicry attacks, verification calibration and PASS scoring"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;

  auto* calibrate = app.add_subcommand("calibrate", "Enroll the gallery, build ROC curves and FAR thresholds");
  calibrate->add_option("-c,--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  calibrate->add_option("-o,--out", out_dir, "Output directory (default: config output_dir)");

  std::vector<std::string> scenarios;
  std::size_t max_steps = 0;
  unsigned jobs = 0;
  std::string format = "both";
  auto* attack = app.add_subcommand("attack", "Run attack scenarios and write reports");
  attack->add_option("-c,--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  attack->add_option("-s,--scenario", scenarios, "Scenario name(s) or 'all' (default: config)");
  attack->add_option("-o,--out", out_dir, "Output directory (default: config output_dir)");
  attack->add_option("--max-steps", max_steps, "Override the iteration limit");
  attack->add_option("-j,--jobs", jobs, "Worker threads");
  attack->add_option("--format", format, "csv, jsonl or both")->check(CLI::IsMember({"csv", "jsonl", "both"}));

  std::vector<std::string> record_files;
  std::string report_format = "csv";
  auto* report = app.add_subcommand("report", "Aggregate record files into a summary");
  report->add_option("records", record_files, "records.csv or records.jsonl files")->required()->check(CLI::ExistingFile);
  report->add_option("-o,--out", out_dir, "Write summary files here");
  report->add_option("--format", report_format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));

  std::string perturbed, original, model = "homography";
  auto* pass = app.add_subcommand("pass", "PASS and perturbation norms of an image pair");
  pass->add_option("perturbed", perturbed, "Perturbed image (PGM/PPM)")->required()->check(CLI::ExistingFile);
  pass->add_option("original", original, "Original image (PGM/PPM)")->required()->check(CLI::ExistingFile);
  pass->add_option("--model", model, "ECC motion model")->check(CLI::IsMember({"translation", "affine", "homography"}));

  std::string probe, identity, kind = "euclidean";
  double threshold = 0.0;
  auto* verify = app.add_subcommand("verify", "Verify one probe image against one gallery template");
  verify->add_option("-c,--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  verify->add_option("--probe", probe, "Probe image")->required()->check(CLI::ExistingFile);
  verify->add_option("--identity", identity, "Claimed identity")->required();
  verify->add_option("--kind", kind, "euclidean or cosine")->check(CLI::IsMember({"euclidean", "cosine"}));
  verify->add_option("--threshold", threshold, "Acceptance threshold (default: calibrated at the config FAR)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*calibrate) return run_calibrate(config_path, out_dir);
    if (*attack) return run_attack(config_path, scenarios, out_dir, max_steps, jobs, format);
    if (*report) return run_report(record_files, out_dir, report_format);
    if (*pass) return run_pass(perturbed, original, model);
    if (*verify) return run_verify(config_path, probe, identity, kind, threshold);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
