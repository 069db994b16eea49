#pragma once

#include <optional>
#include <vector>

#include <json.hpp>

#include "emd/detector/detector.hpp"
#include "emd/eval/metrics.hpp"

namespace emd::eval {

struct SweepRow {
  std::size_t prefix_len = 0;
  std::size_t horizon = 0;
  std::size_t total_len = 0;
  MetricsReport metrics;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  /// Field-wise mean of the rows (counts rounded to the nearest integer).
  MetricsReport average;
  /// Classification of the bare prefix, when requested.
  std::optional<MetricsReport> prefix_only;
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
};

MetricsReport average_reports(const std::vector<SweepRow>& rows);

/// One early-detection evaluation per horizon over `traces`. `base` supplies
/// strategy, sampling and threshold; its prefix_len and horizon are replaced.
SweepResult run_sweep(const genlm::GenerativeLm& lm, const detector::DetectorModel& model,
                      const corpus::Vocabulary& vocab, const std::vector<corpus::ApiTrace>& traces,
                      std::size_t prefix_len, const std::vector<std::size_t>& horizons,
                      const detector::EarlyDetectConfig& base, bool with_prefix_only = true);

std::vector<float> labels_of(const std::vector<corpus::ApiTrace>& traces);

}  // namespace emd::eval
