#include "emd/eval/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include "emd/error.hpp"

namespace emd::eval {
namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

ClassMetrics prf(std::uint64_t hit, std::uint64_t predicted, std::uint64_t actual) {
  ClassMetrics m;
  m.precision = ratio(hit, predicted);
  m.recall = ratio(hit, actual);
  const double s = m.precision + m.recall;
  m.f1 = s == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / s;
  return m;
}

void check_inputs(std::span<const float> scores, std::span<const float> labels) {
  if (scores.size() != labels.size()) {
    throw DataError("metrics: " + std::to_string(scores.size()) + " scores but " + std::to_string(labels.size()) +
                    " labels");
  }
  for (float l : labels) {
    if (l != 0.0f && l != 1.0f) throw DataError("metrics: labels must be 0 or 1");
  }
}

nlohmann::ordered_json class_json(const ClassMetrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

ClassMetrics class_from(const nlohmann::ordered_json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>()};
}

}  // namespace

ConfusionCounts confusion(std::span<const float> scores, std::span<const float> labels, float threshold) {
  check_inputs(scores, labels);
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    const bool actual = labels[i] == 1.0f;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

Rates rates_and_prf(const ConfusionCounts& c) {
  if (c.total() == 0) throw DataError("metrics: no evaluated traces");
  Rates r;
  r.accuracy = ratio(c.tp + c.tn, c.total());
  r.tpr = ratio(c.tp, c.tp + c.fn);
  r.fnr = ratio(c.fn, c.tp + c.fn);
  r.tnr = ratio(c.tn, c.tn + c.fp);
  r.fpr = ratio(c.fp, c.tn + c.fp);
  r.malware = prf(c.tp, c.tp + c.fp, c.tp + c.fn);
  r.benign = prf(c.tn, c.tn + c.fn, c.tn + c.fp);
  return r;
}

Averages macro_weighted(const ClassMetrics& benign, const ClassMetrics& malware, std::uint64_t benign_support,
                        std::uint64_t malware_support) {
  const std::uint64_t total = benign_support + malware_support;
  if (total == 0) throw DataError("metrics: zero total support");
  const double wb = static_cast<double>(benign_support) / static_cast<double>(total);
  const double wm = static_cast<double>(malware_support) / static_cast<double>(total);
  Averages a;
  a.macro = {(benign.precision + malware.precision) / 2.0, (benign.recall + malware.recall) / 2.0,
             (benign.f1 + malware.f1) / 2.0};
  a.weighted = {wb * benign.precision + wm * malware.precision, wb * benign.recall + wm * malware.recall,
                wb * benign.f1 + wm * malware.f1};
  return a;
}

double auc_roc(std::span<const float> scores, std::span<const float> labels) {
  check_inputs(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Counting pairs exactly in integers: each malware score beats every
  // benign score below it and ties with the benign scores in its group.
  std::uint64_t benign_below = 0, wins2 = 0, n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1.0f ? pos : neg) += 1;
      ++j;
    }
    wins2 += pos * (2 * benign_below + neg);
    benign_below += neg;
    n_pos += pos;
    n_neg += neg;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) throw DataError("auc_roc: both classes must be present");
  return static_cast<double>(wins2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MetricsReport compute_metrics(std::span<const float> scores, std::span<const float> labels, float threshold) {
  MetricsReport m;
  m.counts = confusion(scores, labels, threshold);
  m.rates = rates_and_prf(m.counts);
  m.support_malware = m.counts.tp + m.counts.fn;
  m.support_benign = m.counts.tn + m.counts.fp;
  m.averages = macro_weighted(m.rates.benign, m.rates.malware, m.support_benign, m.support_malware);
  m.auc = auc_roc(scores, labels);
  return m;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  return {{"accuracy", rates.accuracy},
          {"auc", auc},
          {"tpr", rates.tpr},
          {"tnr", rates.tnr},
          {"fpr", rates.fpr},
          {"fnr", rates.fnr},
          {"benign", class_json(rates.benign)},
          {"malware", class_json(rates.malware)},
          {"macro", class_json(averages.macro)},
          {"weighted", class_json(averages.weighted)},
          {"support_benign", support_benign},
          {"support_malware", support_malware},
          {"confusion", {{"tp", counts.tp}, {"fp", counts.fp}, {"tn", counts.tn}, {"fn", counts.fn}}}};
}

MetricsReport MetricsReport::from_json(const nlohmann::ordered_json& j) {
  MetricsReport m;
  m.rates.accuracy = j.at("accuracy");
  m.auc = j.at("auc");
  m.rates.tpr = j.at("tpr");
  m.rates.tnr = j.at("tnr");
  m.rates.fpr = j.at("fpr");
  m.rates.fnr = j.at("fnr");
  m.rates.benign = class_from(j.at("benign"));
  m.rates.malware = class_from(j.at("malware"));
  m.averages.macro = class_from(j.at("macro"));
  m.averages.weighted = class_from(j.at("weighted"));
  m.support_benign = j.at("support_benign");
  m.support_malware = j.at("support_malware");
  const auto& c = j.at("confusion");
  m.counts = {c.at("tp"), c.at("fp"), c.at("tn"), c.at("fn")};
  return m;
}

}  // namespace emd::eval
