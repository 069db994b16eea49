#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "emd/corpus/synth.hpp"
#include "emd/corpus/vocab.hpp"
#include "emd/detector/detector.hpp"
#include "emd/error.hpp"
#include "emd/eval/metrics.hpp"
#include "emd/eval/report.hpp"
#include "emd/eval/sweep.hpp"
#include "emd/genlm/lm.hpp"
#include "emd/numerics/rng.hpp"

TEST_SUITE_BEGIN("eval");

using namespace emd;
using namespace emd::eval;

namespace {

struct Instance {
  std::vector<float> scores;
  std::vector<float> labels;
};

// Scores on a coarse grid so ties are common; both classes present.
Instance random_instance(Rng& rng, std::size_t n) {
  Instance in;
  const auto levels = 2 + rng.below(20);
  for (std::size_t i = 0; i < n; ++i) {
    in.scores.push_back(static_cast<float>(rng.below(levels + 1)) / static_cast<float>(levels));
    in.labels.push_back(static_cast<float>(rng.below(2)));
  }
  in.labels[0] = 0.0f;
  in.labels[1] = 1.0f;
  return in;
}

double trapezoid_auc(const Instance& in) {
  std::set<float> thresholds(in.scores.begin(), in.scores.end());
  double pos = 0, neg = 0;
  for (float y : in.labels) (y == 1.0f ? pos : neg) += 1;
  std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
  for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < in.scores.size(); ++i)
      if (in.scores[i] >= *it) (in.labels[i] == 1.0f ? tp : fp) += 1;
    pts.emplace_back(fp / neg, tp / pos);
  }
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) / 2.0;
  return area;
}

encoder::EncoderConfig tiny_encoder(std::size_t vocab) {
  encoder::EncoderConfig c;
  c.vocab_size = vocab;
  c.max_len = 96;
  c.embed_dim = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.ff_dim = 32;
  return c;
}

genlm::LmConfig tiny_lm(std::size_t vocab) {
  genlm::LmConfig c;
  c.vocab_size = vocab;
  c.max_len = 96;
  c.embed_dim = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.ff_dim = 32;
  return c;
}

head::HeadConfig tiny_head() {
  head::HeadConfig h;
  h.input_dim = 16;
  h.hidden = 8;
  return h;
}

}  // namespace

TEST_CASE("confusion examples") {
  const std::vector<float> s{0.9f, 0.1f}, y{1, 0};
  CHECK(confusion(s, y, 0.5f) == ConfusionCounts{1, 0, 1, 0});
  const std::vector<float> ones(7, 1.0f), zeros(7, 0.0f);
  CHECK(confusion(ones, zeros, 0.5f).fp == 7);
  CHECK(confusion(std::vector<float>{0.5f}, std::vector<float>{1}, 0.5f).tp == 1);
  CHECK_THROWS_AS(confusion(s, std::vector<float>{1}, 0.5f), DataError);
}

TEST_CASE("rates examples") {
  const auto r = rates_and_prf({1, 0, 1, 0});
  CHECK(r.accuracy == 1.0);
  CHECK(r.malware.f1 == 1.0);
  CHECK(r.benign.f1 == 1.0);
  const auto z = rates_and_prf({0, 0, 3, 2});
  CHECK(z.malware.precision == 0.0);
  CHECK(z.malware.f1 == 0.0);
  CHECK_THROWS_AS(rates_and_prf({0, 0, 0, 0}), DataError);
}

TEST_CASE("macro and weighted examples") {
  const auto a = macro_weighted({1.0, 0.5, 0.2}, {0.0, 0.5, 0.6}, 90, 10);
  CHECK(a.weighted.precision == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(a.macro.precision == 0.5);
  const auto e = macro_weighted({0.3, 0.4, 0.5}, {0.7, 0.1, 0.9}, 20, 20);
  CHECK(e.macro.precision == doctest::Approx(e.weighted.precision).epsilon(1e-15));
  CHECK(e.macro.f1 == doctest::Approx(e.weighted.f1).epsilon(1e-15));
  CHECK_THROWS_AS(macro_weighted({}, {}, 0, 0), DataError);
}

TEST_CASE("auc examples") {
  CHECK(auc_roc(std::vector<float>{0.1f, 0.2f, 0.8f, 0.9f}, std::vector<float>{0, 0, 1, 1}) == 1.0);
  CHECK(auc_roc(std::vector<float>(6, 0.3f), std::vector<float>{0, 1, 0, 1, 1, 0}) == 0.5);
  CHECK_THROWS_AS(auc_roc(std::vector<float>{0.1f, 0.2f}, std::vector<float>{1, 1}), DataError);
}

TEST_CASE("metrics match independent oracles on 1000 random instances") {
  Rng rng(81);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto in = random_instance(rng, 2 + rng.below(200));
    const float threshold = static_cast<float>(rng.below(11)) / 10.0f;
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < in.scores.size(); ++i) {
      const bool pred = in.scores[i] >= threshold, mal = in.labels[i] == 1.0f;
      tp += pred && mal;
      fp += pred && !mal;
      tn += !pred && !mal;
      fn += !pred && mal;
    }
    const auto c = confusion(in.scores, in.labels, threshold);
    REQUIRE(c == ConfusionCounts{tp, fp, tn, fn});

    const auto r = rates_and_prf(c);
    auto div = [](double a, double b) { return b == 0.0 ? 0.0 : a / b; };
    const double n = static_cast<double>(tp + fp + tn + fn);
    CHECK(r.accuracy == static_cast<double>(tp + tn) / n);
    CHECK(r.tpr == div(tp, tp + fn));
    CHECK(r.tnr == div(tn, tn + fp));
    CHECK(r.fpr == div(fp, fp + tn));
    CHECK(r.fnr == div(fn, fn + tp));
    const double pm = div(tp, tp + fp), rm = div(tp, tp + fn), pb = div(tn, tn + fn), rb = div(tn, tn + fp);
    CHECK(r.malware.precision == pm);
    CHECK(r.malware.recall == rm);
    CHECK(r.malware.f1 == div(2.0 * pm * rm, pm + rm));
    CHECK(r.benign.precision == pb);
    CHECK(r.benign.recall == rb);
    CHECK(r.benign.f1 == div(2.0 * pb * rb, pb + rb));

    const double sb = static_cast<double>(tn + fp), sm = static_cast<double>(tp + fn);
    const auto avg = macro_weighted(r.benign, r.malware, tn + fp, tp + fn);
    CHECK(std::abs(avg.macro.precision - (pb + pm) / 2.0) <= 1e-12);
    CHECK(std::abs(avg.macro.f1 - (r.benign.f1 + r.malware.f1) / 2.0) <= 1e-12);
    CHECK(std::abs(avg.weighted.recall - (sb * rb + sm * rm) / (sb + sm)) <= 1e-12);
    CHECK(std::abs(avg.weighted.f1 - (sb * r.benign.f1 + sm * r.malware.f1) / (sb + sm)) <= 1e-12);

    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < in.scores.size(); ++i) {
      if (in.labels[i] != 1.0f) continue;
      for (std::size_t j = 0; j < in.scores.size(); ++j) {
        if (in.labels[j] != 0.0f) continue;
        pairs += 1;
        wins += in.scores[i] > in.scores[j] ? 1.0 : (in.scores[i] == in.scores[j] ? 0.5 : 0.0);
      }
    }
    const double auc = auc_roc(in.scores, in.labels);
    CHECK(auc == wins / pairs);
    CHECK(std::abs(auc - trapezoid_auc(in)) <= 1e-9);
  }
}

TEST_CASE("metrics report json round trip") {
  Rng rng(82);
  const auto in = random_instance(rng, 50);
  const auto m = compute_metrics(in.scores, in.labels, 0.5f);
  CHECK(m.support_benign + m.support_malware == 50);
  const auto back = MetricsReport::from_json(m.to_json());
  CHECK(back.to_json().dump() == m.to_json().dump());
}

TEST_CASE("averages") {
  Rng rng(83);
  std::vector<SweepRow> rows;
  for (std::size_t h : {10u, 20u, 30u}) {
    const auto in = random_instance(rng, 40);
    rows.push_back({20, h, 20 + h, compute_metrics(in.scores, in.labels, 0.5f)});
  }
  const auto one = average_reports({rows[0]});
  CHECK(one.to_json().dump() == rows[0].metrics.to_json().dump());
  const auto avg = average_reports(rows);
  CHECK(avg.auc == doctest::Approx((rows[0].metrics.auc + rows[1].metrics.auc + rows[2].metrics.auc) / 3.0));
  CHECK(avg.rates.accuracy ==
        doctest::Approx((rows[0].metrics.rates.accuracy + rows[1].metrics.rates.accuracy + rows[2].metrics.rates.accuracy) / 3.0));
}

TEST_CASE("sweep rows, consistency with batch detection, and reports") {
  corpus::SynthConfig sc;
  sc.vocab_size = 40;
  sc.n_traces = 60;
  const auto traces = corpus::generate_synthetic(sc);
  const auto vocab = corpus::build_vocab(traces, 1000);
  genlm::GenerativeLm lm(tiny_lm(vocab.size()), vocab.hash());
  detector::DetectorModel model(tiny_encoder(vocab.size()), tiny_head(), vocab.hash());
  detector::EarlyDetectConfig base;
  const auto r = run_sweep(lm, model, vocab, traces, 20, {10, 20, 30}, base);
  REQUIRE(r.rows.size() == 3);
  CHECK(r.rows[0].total_len == 30);
  CHECK(r.rows[1].total_len == 40);
  CHECK(r.rows[2].total_len == 50);
  REQUIRE(r.prefix_only.has_value());
  CHECK(r.metadata.contains("vocab_hash"));

  const auto labels = labels_of(traces);
  for (const auto& row : r.rows) {
    auto cfg = base;
    cfg.horizon = row.horizon;
    const auto b = detector::batch_detect(lm, model, vocab, traces, cfg);
    CHECK(compute_metrics(b.scores, labels, base.threshold).to_json().dump() == row.metrics.to_json().dump());
  }

  const auto single = run_sweep(lm, model, vocab, traces, 20, {10}, base, false);
  CHECK(single.average.to_json().dump() == single.rows[0].metrics.to_json().dump());
  CHECK(!single.prefix_only.has_value());

  const auto dir = std::filesystem::temp_directory_path();
  for (auto fmt : {ReportFormat::json, ReportFormat::csv}) {
    const auto path = (dir / (fmt == ReportFormat::json ? "emd_sweep.json" : "emd_sweep.csv")).string();
    emit_report(r, path, fmt);
    const auto back = read_report(path, fmt);
    CHECK(format_report(back, fmt) == format_report(r, fmt));
    REQUIRE(back.rows.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(back.rows[i].horizon == r.rows[i].horizon);
      CHECK(back.rows[i].metrics.to_json().dump() == r.rows[i].metrics.to_json().dump());
    }
    CHECK(back.metadata.dump() == r.metadata.dump());
    std::filesystem::remove(path);
  }
  // header + one row per horizon + the averages row; comment lines aside
  std::istringstream csv(format_report(r, ReportFormat::csv));
  std::string line;
  std::size_t data_rows = 0;
  std::getline(csv, line);
  CHECK(line == csv_header());
  while (std::getline(csv, line))
    if (!line.empty() && line[0] != '#') ++data_rows;
  CHECK(data_rows == 4);

  const auto again = run_sweep(lm, model, vocab, traces, 20, {10, 20, 30}, base);
  CHECK(format_report(again, ReportFormat::json) == format_report(r, ReportFormat::json));
  CHECK(format_report(again, ReportFormat::csv) == format_report(r, ReportFormat::csv));
  CHECK_THROWS_AS(parse_report("{}", ReportFormat::json), Error);
  CHECK_THROWS_AS(run_sweep(lm, model, vocab, traces, 20, {}, base), ConfigError);
}

TEST_SUITE_END();
