#include "featmimic/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

namespace featmimic {

namespace {

using nlohmann::json;

constexpr std::string_view kRecordHeader =
    "adversary,internal,target,scenario,success,status,steps,pass,alignment_fallback,l2,linf,final_distance";
constexpr std::string_view kSummaryHeader =
    "adversary,internal,scenario,attempts,successes,success_pct,pass_mean,pass_std";

std::string json_real(double v) { return std::isfinite(v) ? format_real(v) : "null"; }
std::string json_string(const std::string& s) { return json(s).dump(); }
const char* flag(bool b) { return b ? "true" : "false"; }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

bool parse_flag(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("expected true/false, got '" + s + "'");
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot write report");
  out << text;
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

std::string optional_csv(const std::optional<double>& v) { return v ? format_real(*v) : ""; }
std::string optional_json(const std::optional<double>& v) { return v ? json_real(*v) : "null"; }

}  // namespace

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

ReportFormat report_format_from_string(std::string_view name) {
  if (name == "csv") return ReportFormat::csv;
  if (name == "jsonl") return ReportFormat::jsonl;
  throw std::invalid_argument("unknown report format '" + std::string(name) + "'");
}

std::string records_csv(std::span<const AttackRecord> records) {
  std::ostringstream out;
  out << kRecordHeader << '\n';
  for (const auto& r : records) {
    out << csv_field(r.adversary) << ',' << flag(r.internal) << ',' << csv_field(r.target) << ','
        << to_string(r.scenario) << ',' << flag(r.success) << ',' << r.status << ',' << r.steps << ','
        << format_real(r.pass) << ',' << flag(r.alignment_fallback) << ',' << format_real(r.l2) << ','
        << format_real(r.linf) << ',' << format_real(r.final_distance) << '\n';
  }
  return out.str();
}

std::string records_jsonl(std::span<const AttackRecord> records) {
  std::ostringstream out;
  for (const auto& r : records) {
    out << "{\"adversary\":" << json_string(r.adversary) << ",\"internal\":" << flag(r.internal)
        << ",\"target\":" << json_string(r.target) << ",\"scenario\":\"" << to_string(r.scenario)
        << "\",\"success\":" << flag(r.success) << ",\"status\":" << json_string(r.status)
        << ",\"steps\":" << r.steps << ",\"pass\":" << json_real(r.pass)
        << ",\"alignment_fallback\":" << flag(r.alignment_fallback) << ",\"l2\":" << json_real(r.l2)
        << ",\"linf\":" << json_real(r.linf) << ",\"final_distance\":" << json_real(r.final_distance) << "}\n";
  }
  return out.str();
}

std::string summary_csv(std::span<const SummaryRow> rows) {
  std::ostringstream out;
  out << kSummaryHeader << '\n';
  for (const auto& row : rows) {
    for (const auto& [scenario, s] : row.scenarios) {
      out << csv_field(row.adversary) << ',' << flag(row.internal) << ',' << to_string(scenario) << ','
          << s.attempts << ',' << s.successes << ',' << format_real(s.success_percentage) << ','
          << optional_csv(s.pass_mean) << ',' << optional_csv(s.pass_std) << '\n';
    }
  }
  return out.str();
}

std::string summary_jsonl(std::span<const SummaryRow> rows) {
  std::ostringstream out;
  for (const auto& row : rows) {
    for (const auto& [scenario, s] : row.scenarios) {
      out << "{\"adversary\":" << json_string(row.adversary) << ",\"internal\":" << flag(row.internal)
          << ",\"scenario\":\"" << to_string(scenario) << "\",\"attempts\":" << s.attempts
          << ",\"successes\":" << s.successes << ",\"success_pct\":" << json_real(s.success_percentage)
          << ",\"pass_mean\":" << optional_json(s.pass_mean) << ",\"pass_std\":" << optional_json(s.pass_std)
          << "}\n";
    }
  }
  return out.str();
}

std::vector<AttackRecord> parse_records_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kRecordHeader) throw std::invalid_argument("unexpected record CSV header");
  std::vector<AttackRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 12) throw std::invalid_argument("record CSV line has " + std::to_string(f.size()) + " fields");
    AttackRecord r;
    r.adversary = f[0];
    r.internal = parse_flag(f[1]);
    r.target = f[2];
    r.scenario = scenario_from_string(f[3]);
    r.success = parse_flag(f[4]);
    r.status = f[5];
    r.steps = std::stoul(f[6]);
    r.pass = std::stod(f[7]);
    r.alignment_fallback = parse_flag(f[8]);
    r.l2 = std::stod(f[9]);
    r.linf = std::stod(f[10]);
    r.final_distance = std::stod(f[11]);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<AttackRecord> parse_records_jsonl(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<AttackRecord> records;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    AttackRecord r;
    r.adversary = j.at("adversary").get<std::string>();
    r.internal = j.at("internal").get<bool>();
    r.target = j.at("target").get<std::string>();
    r.scenario = scenario_from_string(j.at("scenario").get<std::string>());
    r.success = j.at("success").get<bool>();
    r.status = j.at("status").get<std::string>();
    r.steps = j.at("steps").get<std::size_t>();
    r.pass = j.at("pass").is_null() ? NAN : j["pass"].get<double>();
    r.alignment_fallback = j.at("alignment_fallback").get<bool>();
    r.l2 = j.at("l2").get<double>();
    r.linf = j.at("linf").get<double>();
    r.final_distance = j.at("final_distance").get<double>();
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<AttackRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open records");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    if (path.extension() == ".csv") return parse_records_csv(buf.str());
    return parse_records_jsonl(buf.str());
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void export_report(std::span<const SummaryRow> rows, std::span<const AttackRecord> records, ReportFormat format,
                   const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error(dir.string() + ": " + ec.message());
  if (format == ReportFormat::csv) {
    write_file(dir / "records.csv", records_csv(records));
    write_file(dir / "summary.csv", summary_csv(rows));
  } else {
    write_file(dir / "records.jsonl", records_jsonl(records));
    write_file(dir / "summary.jsonl", summary_jsonl(rows));
  }
}

std::string format_summary_table(std::span<const SummaryRow> rows) {
  std::vector<Scenario> columns;
  for (Scenario s : kAllScenarios) {
    for (const auto& row : rows) {
      if (row.scenarios.count(s)) {
        columns.push_back(s);
        break;
      }
    }
  }
  std::ostringstream out;
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-10s %-9s", "adversary", "kind");
  out << buf;
  for (Scenario s : columns) {
    std::snprintf(buf, sizeof buf, " %28s", std::string(to_string(s)).c_str());
    out << buf;
  }
  out << '\n';
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%-10s %-9s", row.adversary.c_str(), row.internal ? "internal" : "external");
    out << buf;
    for (Scenario s : columns) {
      auto it = row.scenarios.find(s);
      std::string cell = "-";
      if (it != row.scenarios.end()) {
        const auto& st = it->second;
        char c[64];
        if (st.pass_mean && st.pass_std) {
          std::snprintf(c, sizeof c, "%.4f±%.4f (%.2f%%)", *st.pass_mean, *st.pass_std, st.success_percentage);
        } else if (st.pass_mean) {
          std::snprintf(c, sizeof c, "%.4f (%.2f%%)", *st.pass_mean, st.success_percentage);
        } else {
          std::snprintf(c, sizeof c, "n/a (%.2f%%)", st.success_percentage);
        }
        cell = c;
      }
      std::snprintf(buf, sizeof buf, " %28s", cell.c_str());
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace featmimic
