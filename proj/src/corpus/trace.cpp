#include "emd/corpus/trace.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "emd/error.hpp"

namespace emd::corpus {
namespace {

bool has_space(std::string_view s) {
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) return true;
  }
  return false;
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_csv_fields(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      fields.emplace_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return fields;
}

[[noreturn]] void fail_line(std::size_t line, const std::string& msg) {
  throw DataError("line " + std::to_string(line) + ": " + msg);
}

ApiTrace parse_json_line(std::string_view line, std::size_t lineno) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    fail_line(lineno, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) fail_line(lineno, "record is not a JSON object");
  ApiTrace t;
  try {
    t.id = j.at("id").get<std::string>();
    t.label = parse_label(j.at("label").get<std::string>());
    t.calls = j.at("api_calls").get<std::vector<std::string>>();
    t.source = j.value("source", std::string{});
  } catch (const nlohmann::json::exception& e) {
    fail_line(lineno, std::string("bad field: ") + e.what());
  } catch (const DataError& e) {
    fail_line(lineno, e.what());
  }
  return t;
}

}  // namespace

std::string_view label_name(Label label) { return label == Label::malware ? "malware" : "benign"; }

Label parse_label(std::string_view text) {
  if (text == "malware" || text == "1") return Label::malware;
  if (text == "benign" || text == "0") return Label::benign;
  throw DataError("unknown label '" + std::string(text) + "'");
}

TraceFormat parse_format(std::string_view text) {
  if (text == "jsonl") return TraceFormat::jsonl;
  if (text == "csv") return TraceFormat::csv;
  throw ConfigError("unknown trace format '" + std::string(text) + "' (expected jsonl or csv)");
}

void validate(const ApiTrace& trace) {
  if (trace.calls.empty()) throw DataError("trace '" + trace.id + "' has no API calls");
  for (const std::string& c : trace.calls) {
    if (c.empty() || has_space(c)) {
      throw DataError("trace '" + trace.id + "' contains an invalid call name '" + c + "'");
    }
  }
}

std::vector<ApiTrace> ingest_text(std::string_view text, TraceFormat format) {
  std::vector<ApiTrace> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  std::size_t n_fields = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ApiTrace t;
    if (format == TraceFormat::jsonl) {
      t = parse_json_line(line, lineno);
    } else {
      auto fields = split_csv_fields(line);
      if (!header_seen) {
        const bool ok = fields.size() >= 3 && fields[0] == "id" && fields[1] == "label" && fields[2] == "calls" &&
                        (fields.size() == 3 || (fields.size() == 4 && fields[3] == "source"));
        if (!ok) fail_line(lineno, "expected header 'id,label,calls[,source]'");
        header_seen = true;
        n_fields = fields.size();
        continue;
      }
      if (fields.size() != n_fields) {
        fail_line(lineno, "expected " + std::to_string(n_fields) + " fields, got " + std::to_string(fields.size()));
      }
      t.id = fields[0];
      try {
        t.label = parse_label(fields[1]);
      } catch (const DataError& e) {
        fail_line(lineno, e.what());
      }
      t.calls = split_ws(fields[2]);
      if (n_fields == 4) t.source = fields[3];
    }
    if (t.calls.empty()) fail_line(lineno, "trace '" + t.id + "' has no API calls");
    try {
      validate(t);
    } catch (const DataError& e) {
      fail_line(lineno, e.what());
    }
    out.push_back(std::move(t));
  }
  if (format == TraceFormat::csv && !header_seen) throw DataError("CSV input is missing its header row");
  return out;
}

std::vector<ApiTrace> ingest(const std::filesystem::path& path, TraceFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open trace file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return ingest_text(ss.str(), format);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_traces(const std::vector<ApiTrace>& traces, TraceFormat format) {
  std::ostringstream os;
  if (format == TraceFormat::csv) os << "id,label,calls,source\n";
  for (const ApiTrace& t : traces) {
    validate(t);
    if (format == TraceFormat::jsonl) {
      nlohmann::ordered_json j;
      j["id"] = t.id;
      j["label"] = label_name(t.label);
      j["api_calls"] = t.calls;
      j["source"] = t.source;
      os << j.dump() << '\n';
    } else {
      if (t.id.find(',') != std::string::npos || t.source.find(',') != std::string::npos) {
        throw DataError("trace '" + t.id + "' cannot be written as CSV: comma in id or source");
      }
      os << t.id << ',' << label_name(t.label) << ',';
      for (std::size_t i = 0; i < t.calls.size(); ++i) os << (i ? " " : "") << t.calls[i];
      os << ',' << t.source << '\n';
    }
  }
  return os.str();
}

void write_traces(const std::filesystem::path& path, const std::vector<ApiTrace>& traces,
                  TraceFormat format) {
  const std::string text = format_traces(traces, format);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write trace file " + path.string());
  out << text;
}

}  // namespace emd::corpus
