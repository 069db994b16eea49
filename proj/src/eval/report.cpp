#include "emd/eval/report.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "emd/error.hpp"

namespace emd::eval {
namespace {

constexpr std::string_view kHeader =
    "prefix_len,horizon,total_len,accuracy,auc,tpr,tnr,fpr,fnr,"
    "precision_benign,recall_benign,f1_benign,precision_malware,recall_malware,f1_malware,"
    "macro_precision,macro_recall,macro_f1,weighted_precision,weighted_recall,weighted_f1,"
    "support_benign,support_malware,tp,fp,tn,fn";
constexpr std::string_view kMetaPrefix = "# metadata ";
constexpr std::string_view kPrefixOnlyPrefix = "# prefix_only ";

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<double> metric_values(const MetricsReport& m) {
  const auto& r = m.rates;
  const auto& a = m.averages;
  return {r.accuracy,         m.auc,           r.tpr,         r.tnr,           r.fpr,
          r.fnr,              r.benign.precision, r.benign.recall, r.benign.f1, r.malware.precision,
          r.malware.recall,   r.malware.f1,    a.macro.precision, a.macro.recall, a.macro.f1,
          a.weighted.precision, a.weighted.recall, a.weighted.f1};
}

std::string csv_row(const std::string& p, const std::string& h, const std::string& t, const MetricsReport& m) {
  std::string line = p + "," + h + "," + t;
  for (double v : metric_values(m)) line += "," + num(v);
  for (std::uint64_t v : {m.support_benign, m.support_malware, m.counts.tp, m.counts.fp, m.counts.tn, m.counts.fn}) {
    line += "," + std::to_string(v);
  }
  return line + "\n";
}

std::vector<std::string> split_commas(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double to_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw DataError("report: bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw DataError("report: bad number '" + s + "'");
  }
}

std::uint64_t to_count(const std::string& s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("report: bad integer '" + s + "'");
  return v;
}

MetricsReport metrics_from_fields(const std::vector<std::string>& f) {
  std::vector<double> v;
  for (std::size_t i = 3; i < 21; ++i) v.push_back(to_double(f[i]));
  MetricsReport m;
  auto& r = m.rates;
  auto& a = m.averages;
  r.accuracy = v[0];
  m.auc = v[1];
  r.tpr = v[2];
  r.tnr = v[3];
  r.fpr = v[4];
  r.fnr = v[5];
  r.benign = {v[6], v[7], v[8]};
  r.malware = {v[9], v[10], v[11]};
  a.macro = {v[12], v[13], v[14]};
  a.weighted = {v[15], v[16], v[17]};
  m.support_benign = to_count(f[21]);
  m.support_malware = to_count(f[22]);
  m.counts = {to_count(f[23]), to_count(f[24]), to_count(f[25]), to_count(f[26])};
  return m;
}

nlohmann::ordered_json row_json(const SweepRow& r) {
  return {{"prefix_len", r.prefix_len}, {"horizon", r.horizon}, {"total_len", r.total_len},
          {"metrics", r.metrics.to_json()}};
}

}  // namespace

ReportFormat parse_report_format(std::string_view text) {
  if (text == "json") return ReportFormat::json;
  if (text == "csv") return ReportFormat::csv;
  throw ConfigError("unknown report format '" + std::string(text) + "' (expected json or csv)");
}

std::string_view csv_header() { return kHeader; }

std::string format_report(const SweepResult& result, ReportFormat format) {
  if (format == ReportFormat::json) {
    nlohmann::ordered_json j;
    j["format"] = kReportFormat;
    j["metadata"] = result.metadata;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : result.rows) j["rows"].push_back(row_json(r));
    j["average"] = result.average.to_json();
    j["prefix_only"] = result.prefix_only ? result.prefix_only->to_json() : nlohmann::ordered_json(nullptr);
    return j.dump(2) + "\n";
  }
  std::string out(kHeader);
  out += "\n";
  for (const auto& r : result.rows) {
    out += csv_row(std::to_string(r.prefix_len), std::to_string(r.horizon), std::to_string(r.total_len), r.metrics);
  }
  const std::string p = result.rows.empty() ? "0" : std::to_string(result.rows.front().prefix_len);
  out += csv_row(p, "average", "average", result.average);
  if (result.prefix_only) {
    std::string po = csv_row(p, "0", p, *result.prefix_only);
    out += std::string(kPrefixOnlyPrefix) + po;
  }
  out += std::string(kMetaPrefix) + result.metadata.dump() + "\n";
  return out;
}

SweepResult parse_report(std::string_view text, ReportFormat format) {
  SweepResult result;
  if (format == ReportFormat::json) {
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("report: ") + e.what());
    }
    if (!j.is_object() || j.value("format", "") != kReportFormat) {
      throw CompatError("report: expected format " + std::string(kReportFormat));
    }
    result.metadata = j.at("metadata");
    for (const auto& r : j.at("rows")) {
      result.rows.push_back({r.at("prefix_len"), r.at("horizon"), r.at("total_len"),
                             MetricsReport::from_json(r.at("metrics"))});
    }
    result.average = MetricsReport::from_json(j.at("average"));
    if (!j.at("prefix_only").is_null()) result.prefix_only = MetricsReport::from_json(j.at("prefix_only"));
    return result;
  }
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw CompatError("report: unexpected CSV header");
  bool have_average = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.starts_with(kMetaPrefix)) {
      result.metadata = nlohmann::ordered_json::parse(line.substr(kMetaPrefix.size()));
      continue;
    }
    const bool prefix_row = line.starts_with(kPrefixOnlyPrefix);
    const auto f = split_commas(prefix_row ? std::string_view(line).substr(kPrefixOnlyPrefix.size()) : line);
    if (f.size() != 27) throw DataError("report: CSV row has " + std::to_string(f.size()) + " fields");
    if (prefix_row) {
      result.prefix_only = metrics_from_fields(f);
    } else if (f[1] == "average") {
      result.average = metrics_from_fields(f);
      have_average = true;
    } else {
      result.rows.push_back({to_count(f[0]), to_count(f[1]), to_count(f[2]), metrics_from_fields(f)});
    }
  }
  if (!have_average) throw DataError("report: CSV lacks the averages row");
  return result;
}

void emit_report(const SweepResult& result, const std::string& path, ReportFormat format) {
  write_text(path, format_report(result, format));
}

SweepResult read_report(const std::string& path, ReportFormat format) { return parse_report(read_text(path), format); }

nlohmann::ordered_json evaluation_json(const MetricsReport& metrics, const nlohmann::ordered_json& metadata) {
  return {{"format", kReportFormat}, {"metadata", metadata}, {"metrics", metrics.to_json()}};
}

void write_text(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError("failed writing '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace emd::eval
