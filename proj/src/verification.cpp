#include "featmimic/verification.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace featmimic {

namespace {

static_assert(std::endian::native == std::endian::little, "descriptor files are read as native little-endian");

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

std::size_t count_below(const std::vector<double>& sorted, double threshold) {
  return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), threshold) - sorted.begin());
}

std::vector<std::string> read_manifest_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open manifest");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

std::string_view to_string(DistanceKind kind) { return kind == DistanceKind::euclidean ? "euclidean" : "cosine"; }

DistanceKind distance_kind_from_string(std::string_view name) {
  if (name == "euclidean") return DistanceKind::euclidean;
  if (name == "cosine") return DistanceKind::cosine;
  throw std::invalid_argument("unknown distance kind '" + std::string(name) + "'");
}

double distance(std::span<const float> a, std::span<const float> b, DistanceKind kind) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("descriptor lengths differ: " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  }
  if (kind == DistanceKind::euclidean) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      sum += d * d;
    }
    return std::sqrt(sum);
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine distance is undefined for a zero vector");
  return std::clamp(1.0 - dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 2.0);
}

bool GalleryTemplate::usable_for_cosine() const {
  return std::any_of(mean_descriptor.values.begin(), mean_descriptor.values.end(), [](float v) { return v != 0.0f; });
}

std::vector<GalleryTemplate> enroll_descriptors(
    const std::vector<std::pair<std::string, std::vector<Descriptor>>>& descriptors) {
  if (descriptors.empty()) throw std::invalid_argument("enrollment needs at least one identity");
  std::vector<GalleryTemplate> gallery;
  gallery.reserve(descriptors.size());
  for (const auto& [identity, list] : descriptors) {
    if (list.empty()) throw std::invalid_argument("identity '" + identity + "' has no enrollment images");
    const std::size_t n = list.front().size();
    std::vector<double> sum(n, 0.0);
    for (const auto& d : list) {
      if (d.size() != n) throw std::invalid_argument("identity '" + identity + "' has mixed descriptor lengths");
      for (std::size_t i = 0; i < n; ++i) sum[i] += d.values[i];
    }
    Descriptor mean;
    mean.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) mean.values[i] = static_cast<float>(sum[i] / static_cast<double>(list.size()));
    gallery.push_back({identity, std::move(mean), list.size()});
  }
  return gallery;
}

std::vector<GalleryTemplate> enroll(const Network& net, const std::vector<IdentityImages>& images, const Tap& tap) {
  std::vector<std::pair<std::string, std::vector<Descriptor>>> descriptors;
  descriptors.reserve(images.size());
  for (const auto& [identity, list] : images) {
    std::vector<Descriptor> ds;
    ds.reserve(list.size());
    for (const auto& img : list) ds.push_back(Descriptor::from_tensor(features(net, img, tap)));
    descriptors.emplace_back(identity, std::move(ds));
  }
  return enroll_descriptors(descriptors);
}

ScoreSet score_all(std::span<const GalleryTemplate> gallery, std::span<const LabeledDescriptor> probes,
                   DistanceKind kind) {
  if (gallery.empty() || probes.empty()) throw std::invalid_argument("scoring needs a gallery and probes");
  ScoreSet scores;
  for (const auto& probe : probes) {
    for (const auto& t : gallery) {
      const double d = distance(probe.descriptor, t.mean_descriptor, kind);
      (probe.identity == t.identity ? scores.positives : scores.negatives).push_back(d);
    }
  }
  return scores;
}

double false_accept_rate(std::span<const double> negatives, double threshold) {
  const auto accepted = std::count_if(negatives.begin(), negatives.end(), [&](double d) { return d < threshold; });
  return static_cast<double>(accepted) / static_cast<double>(negatives.size());
}

RocCurve roc(const ScoreSet& scores) {
  if (scores.positives.empty() || scores.negatives.empty()) {
    throw std::invalid_argument("ROC needs both positive and negative scores");
  }
  auto pos = scores.positives;
  auto neg = scores.negatives;
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  std::vector<double> thresholds;
  thresholds.reserve(pos.size() + neg.size() + 1);
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(std::nextafter(thresholds.back(), HUGE_VAL));

  RocCurve curve;
  curve.points.reserve(thresholds.size());
  for (double t : thresholds) {
    curve.points.push_back({t, static_cast<double>(count_below(neg, t)) / static_cast<double>(neg.size()),
                            static_cast<double>(count_below(pos, t)) / static_cast<double>(pos.size())});
  }
  return curve;
}

double threshold_at_far(const ScoreSet& scores, double far_target) {
  if (!(far_target > 0.0 && far_target < 1.0)) throw std::invalid_argument("far_target must lie in (0,1)");
  const std::size_t n = scores.negatives.size();
  const auto rate = [n](std::size_t k) { return static_cast<double>(k) / static_cast<double>(n); };
  if (n == 0 || rate(1) > far_target) {
    const auto required = static_cast<std::size_t>(std::ceil(1.0 / far_target - 1e-9));
    throw std::invalid_argument("threshold at FAR " + std::to_string(far_target) + " needs at least " +
                                std::to_string(required) + " negative scores, got " + std::to_string(n));
  }
  // Largest number of accepted negatives the target allows.
  auto allowed = static_cast<std::size_t>(far_target * static_cast<double>(n));
  while (allowed + 1 <= n && rate(allowed + 1) <= far_target) ++allowed;
  while (allowed > 0 && rate(allowed) > far_target) --allowed;
  auto neg = scores.negatives;
  std::sort(neg.begin(), neg.end());
  // Strict acceptance: at threshold neg[allowed], at most `allowed` negatives lie below.
  return neg[allowed];
}

bool verify(const Descriptor& probe, const GalleryTemplate& gallery_template, double threshold, DistanceKind kind) {
  if (!(threshold > 0.0)) throw std::invalid_argument("verification threshold must be positive");
  return distance(probe, gallery_template.mean_descriptor, kind) < threshold;
}

void write_descriptors(const std::filesystem::path& path, std::span<const Descriptor> descriptors) {
  const std::uint32_t length = descriptors.empty() ? 0 : static_cast<std::uint32_t>(descriptors.front().size());
  const auto count = static_cast<std::uint32_t>(descriptors.size());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot write descriptor file");
  out.write(reinterpret_cast<const char*>(&length), sizeof length);
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  for (const auto& d : descriptors) {
    if (d.size() != length) fail(path, "descriptors of mixed length");
    out.write(reinterpret_cast<const char*>(d.values.data()), static_cast<std::streamsize>(length * sizeof(float)));
  }
  if (!out) fail(path, "write failed");
}

std::vector<Descriptor> read_descriptors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open descriptor file");
  std::uint32_t length = 0, count = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in) fail(path, "truncated descriptor header");
  std::vector<Descriptor> out(count);
  for (auto& d : out) {
    d.values.resize(length);
    in.read(reinterpret_cast<char*>(d.values.data()), static_cast<std::streamsize>(length * sizeof(float)));
    if (!in) fail(path, "truncated descriptor payload");
  }
  if (in.peek() != std::char_traits<char>::eof()) fail(path, "trailing bytes after descriptor payload");
  return out;
}

void write_gallery(const std::filesystem::path& blob, const std::filesystem::path& manifest,
                   std::span<const GalleryTemplate> gallery) {
  std::vector<Descriptor> ds;
  std::ofstream out(manifest);
  if (!out) fail(manifest, "cannot write gallery manifest");
  out << "# identity enrollment_count\n";
  for (const auto& t : gallery) {
    ds.push_back(t.mean_descriptor);
    out << t.identity << ' ' << t.enrollment_count << '\n';
  }
  write_descriptors(blob, ds);
}

std::vector<GalleryTemplate> read_gallery(const std::filesystem::path& blob, const std::filesystem::path& manifest) {
  auto ds = read_descriptors(blob);
  auto lines = read_manifest_lines(manifest);
  if (lines.size() != ds.size()) fail(manifest, "manifest lists " + std::to_string(lines.size()) +
                                                    " identities but the gallery holds " + std::to_string(ds.size()));
  std::vector<GalleryTemplate> gallery;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::istringstream fields(lines[i]);
    GalleryTemplate t;
    if (!(fields >> t.identity >> t.enrollment_count) || t.enrollment_count == 0) {
      fail(manifest, "malformed line: " + lines[i]);
    }
    t.mean_descriptor = std::move(ds[i]);
    gallery.push_back(std::move(t));
  }
  return gallery;
}

void write_labeled_descriptors(const std::filesystem::path& blob, const std::filesystem::path& manifest,
                               std::span<const LabeledDescriptor> probes) {
  std::vector<Descriptor> ds;
  std::ofstream out(manifest);
  if (!out) fail(manifest, "cannot write probe manifest");
  out << "# identity\n";
  for (const auto& p : probes) {
    ds.push_back(p.descriptor);
    out << p.identity << '\n';
  }
  write_descriptors(blob, ds);
}

std::vector<LabeledDescriptor> read_labeled_descriptors(const std::filesystem::path& blob,
                                                        const std::filesystem::path& manifest) {
  auto ds = read_descriptors(blob);
  auto lines = read_manifest_lines(manifest);
  if (lines.size() != ds.size()) fail(manifest, "manifest and descriptor counts differ");
  std::vector<LabeledDescriptor> out;
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back({lines[i], std::move(ds[i])});
  return out;
}

}  // namespace featmimic
