#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "featmimic/harness.hpp"

namespace featmimic {

enum class ReportFormat { csv, jsonl };

ReportFormat report_format_from_string(std::string_view name);

// Record columns, in order:
//   adversary,internal,target,scenario,success,status,steps,pass,alignment_fallback,l2,linf,final_distance
// Summary columns, one line per (adversary, scenario):
//   adversary,internal,scenario,attempts,successes,success_pct,pass_mean,pass_std
// Reals use 6 significant digits; absent statistics are empty (CSV) or null (JSON).

std::string records_csv(std::span<const AttackRecord> records);
std::string records_jsonl(std::span<const AttackRecord> records);
std::string summary_csv(std::span<const SummaryRow> rows);
std::string summary_jsonl(std::span<const SummaryRow> rows);

std::vector<AttackRecord> parse_records_csv(std::string_view text);
std::vector<AttackRecord> parse_records_jsonl(std::string_view text);
/// Dispatches on the file extension (.csv or .jsonl).
std::vector<AttackRecord> read_records(const std::filesystem::path& path);

/// Writes records.<ext> and summary.<ext> into `dir`, creating it if needed.
void export_report(std::span<const SummaryRow> rows, std::span<const AttackRecord> records, ReportFormat format,
                   const std::filesystem::path& dir);

/// Human-readable table: "mean±std (success%)" per scenario column.
std::string format_summary_table(std::span<const SummaryRow> rows);

/// printf("%.6g") of a finite value.
std::string format_real(double v);

}  // namespace featmimic
