#pragma once

#include <string>
#include <string_view>

#include "emd/eval/sweep.hpp"

namespace emd::eval {

inline constexpr std::string_view kReportFormat = "emd-report-v1";

enum class ReportFormat { json, csv };

ReportFormat parse_report_format(std::string_view text);

/// Fixed CSV header; the averages row carries "average" in its horizon and
/// total_len columns.
std::string_view csv_header();

std::string format_report(const SweepResult& result, ReportFormat format);
SweepResult parse_report(std::string_view text, ReportFormat format);

void emit_report(const SweepResult& result, const std::string& path, ReportFormat format);
SweepResult read_report(const std::string& path, ReportFormat format);

/// Single-evaluation report (full traces, one detector).
nlohmann::ordered_json evaluation_json(const MetricsReport& metrics, const nlohmann::ordered_json& metadata);

void write_text(const std::string& path, std::string_view text);
std::string read_text(const std::string& path);

}  // namespace emd::eval
