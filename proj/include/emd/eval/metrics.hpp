#pragma once

#include <cstdint>
#include <span>

#include <json.hpp>

namespace emd::eval {

/// Malware is the positive class.
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  [[nodiscard]] std::uint64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Counts with score >= threshold predicted malware. Labels are 0 or 1.
ConfusionCounts confusion(std::span<const float> scores, std::span<const float> labels, float threshold);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct Averages {
  ClassMetrics macro;
  ClassMetrics weighted;
};

/// Zero denominators give 0 precision/recall; F1 is 0 when P + R = 0.
struct Rates {
  double accuracy = 0.0;
  double tpr = 0.0;
  double tnr = 0.0;
  double fpr = 0.0;
  double fnr = 0.0;
  ClassMetrics benign;
  ClassMetrics malware;
};

Rates rates_and_prf(const ConfusionCounts& c);

/// Unweighted and support-weighted means over the benign and malware classes.
Averages macro_weighted(const ClassMetrics& benign, const ClassMetrics& malware, std::uint64_t benign_support,
                        std::uint64_t malware_support);

/// Probability that a random malware score exceeds a random benign one, ties
/// counting one half.
double auc_roc(std::span<const float> scores, std::span<const float> labels);

struct MetricsReport {
  ConfusionCounts counts;
  Rates rates;
  Averages averages;
  double auc = 0.0;
  std::uint64_t support_benign = 0;
  std::uint64_t support_malware = 0;

  [[nodiscard]] nlohmann::ordered_json to_json() const;
  static MetricsReport from_json(const nlohmann::ordered_json& j);
};

MetricsReport compute_metrics(std::span<const float> scores, std::span<const float> labels, float threshold);

}  // namespace emd::eval
