#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace emd::corpus {

enum class Label : int { benign = 0, malware = 1 };

std::string_view label_name(Label label);
/// Accepts "benign"/"malware" (also "0"/"1").
Label parse_label(std::string_view text);

/// Ordered API calls observed for one executable, with its class.
struct ApiTrace {
  std::string id;
  Label label = Label::benign;
  std::vector<std::string> calls;
  std::string source;

  bool operator==(const ApiTrace&) const = default;
};

enum class TraceFormat { jsonl, csv };

TraceFormat parse_format(std::string_view text);

/// Throws DataError unless calls are non-empty and each name is a non-empty
/// token without whitespace.
void validate(const ApiTrace& trace);

/// Reads one trace per record, preserving order. Parse errors carry the
/// 1-based line number.
std::vector<ApiTrace> ingest(const std::filesystem::path& path, TraceFormat format);
std::vector<ApiTrace> ingest_text(std::string_view text, TraceFormat format);

void write_traces(const std::filesystem::path& path, const std::vector<ApiTrace>& traces,
                  TraceFormat format);
std::string format_traces(const std::vector<ApiTrace>& traces, TraceFormat format);

}  // namespace emd::corpus
