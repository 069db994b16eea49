#include "emd/eval/sweep.hpp"

#include <cmath>

#include "emd/error.hpp"

namespace emd::eval {
namespace {

std::uint64_t mean_count(const std::vector<SweepRow>& rows, std::uint64_t ConfusionCounts::* field) {
  double s = 0.0;
  for (const auto& r : rows) s += static_cast<double>(r.metrics.counts.*field);
  return static_cast<std::uint64_t>(std::llround(s / static_cast<double>(rows.size())));
}

}  // namespace

std::vector<float> labels_of(const std::vector<corpus::ApiTrace>& traces) {
  std::vector<float> labels(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) labels[i] = traces[i].label == corpus::Label::malware ? 1.0f : 0.0f;
  return labels;
}

MetricsReport average_reports(const std::vector<SweepRow>& rows) {
  if (rows.empty()) throw ConfigError("sweep: no rows to average");
  const double n = static_cast<double>(rows.size());
  MetricsReport a;
  auto mean = [&](auto get) {
    double s = 0.0;
    for (const auto& r : rows) s += get(r.metrics);
    return s / n;
  };
  auto mean_class = [&](auto get) {
    return ClassMetrics{mean([&](const MetricsReport& m) { return get(m).precision; }),
                        mean([&](const MetricsReport& m) { return get(m).recall; }),
                        mean([&](const MetricsReport& m) { return get(m).f1; })};
  };
  a.rates.accuracy = mean([](const MetricsReport& m) { return m.rates.accuracy; });
  a.auc = mean([](const MetricsReport& m) { return m.auc; });
  a.rates.tpr = mean([](const MetricsReport& m) { return m.rates.tpr; });
  a.rates.tnr = mean([](const MetricsReport& m) { return m.rates.tnr; });
  a.rates.fpr = mean([](const MetricsReport& m) { return m.rates.fpr; });
  a.rates.fnr = mean([](const MetricsReport& m) { return m.rates.fnr; });
  a.rates.benign = mean_class([](const MetricsReport& m) -> const ClassMetrics& { return m.rates.benign; });
  a.rates.malware = mean_class([](const MetricsReport& m) -> const ClassMetrics& { return m.rates.malware; });
  a.averages.macro = mean_class([](const MetricsReport& m) -> const ClassMetrics& { return m.averages.macro; });
  a.averages.weighted =
      mean_class([](const MetricsReport& m) -> const ClassMetrics& { return m.averages.weighted; });
  a.counts = {mean_count(rows, &ConfusionCounts::tp), mean_count(rows, &ConfusionCounts::fp),
              mean_count(rows, &ConfusionCounts::tn), mean_count(rows, &ConfusionCounts::fn)};
  a.support_benign = rows.front().metrics.support_benign;
  a.support_malware = rows.front().metrics.support_malware;
  return a;
}

SweepResult run_sweep(const genlm::GenerativeLm& lm, const detector::DetectorModel& model,
                      const corpus::Vocabulary& vocab, const std::vector<corpus::ApiTrace>& traces,
                      std::size_t prefix_len, const std::vector<std::size_t>& horizons,
                      const detector::EarlyDetectConfig& base, bool with_prefix_only) {
  if (horizons.empty()) throw ConfigError("sweep: horizons must not be empty");
  if (traces.empty()) throw DataError("sweep: no test traces");
  const auto labels = labels_of(traces);
  SweepResult result;
  for (std::size_t h : horizons) {
    detector::EarlyDetectConfig cfg = base;
    cfg.prefix_len = prefix_len;
    cfg.horizon = h;
    const auto out = detector::batch_detect(lm, model, vocab, traces, cfg);
    if (!out.errors.empty()) {
      const auto& e = out.errors.front();
      throw DataError("sweep: trace " + e.trace_id + ": " + e.message);
    }
    result.rows.push_back({prefix_len, h, prefix_len + h, compute_metrics(out.scores, labels, cfg.threshold)});
  }
  result.average = average_reports(result.rows);
  if (with_prefix_only) {
    std::vector<corpus::ApiTrace> cut = traces;
    for (auto& t : cut) t.calls.resize(std::min(prefix_len, t.calls.size()));
    const auto scores = detector::score_traces(model, cut, vocab);
    result.prefix_only = compute_metrics(scores, labels, base.threshold);
  }
  nlohmann::ordered_json meta;
  meta["prefix_len"] = prefix_len;
  meta["horizons"] = horizons;
  meta["early_detect"] = base.to_json();
  meta["test_traces"] = traces.size();
  meta["test_malware"] = result.rows.front().metrics.support_malware;
  meta["test_benign"] = result.rows.front().metrics.support_benign;
  meta["vocab_hash"] = corpus::hex64(vocab.hash());
  meta["detector_config_hash"] = model.config_hash();
  result.metadata = std::move(meta);
  return result;
}

}  // namespace emd::eval
