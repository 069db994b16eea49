#include "emd/corpus/batch.hpp"

#include <algorithm>

#include "emd/error.hpp"

namespace emd::corpus {

std::vector<std::int32_t> encode_ids(std::span<const std::string> calls, const Vocabulary& vocab,
                                     std::size_t max_len, bool add_eos) {
  if (max_len < 1) throw ConfigError("encode: max_len must be at least 1");
  std::vector<std::int32_t> ids;
  ids.reserve(std::min(max_len, calls.size() + 2));
  ids.push_back(kBos);
  for (const std::string& c : calls) {
    if (ids.size() == max_len) break;
    ids.push_back(vocab.id_of(c));
  }
  if (add_eos && ids.size() < max_len) ids.push_back(kEos);
  return ids;
}

EncodedSequence encode(std::span<const std::string> calls, const Vocabulary& vocab, std::size_t max_len,
                       bool add_eos) {
  EncodedSequence out;
  out.ids = encode_ids(calls, vocab, max_len, add_eos);
  out.length = out.ids.size();
  out.mask.assign(max_len, 0);
  std::fill_n(out.mask.begin(), out.length, 1);
  out.ids.resize(max_len, kPad);
  return out;
}

std::vector<std::string> decode(std::span<const std::int32_t> ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (std::int32_t id : ids) {
    const std::string& name = vocab.name_of(id);
    if (!Vocabulary::is_reserved(id)) out.push_back(name);
  }
  return out;
}

EncodedBatch pad_rows(const std::vector<std::vector<std::int32_t>>& rows, std::vector<float> labels,
                      std::size_t pad_to) {
  if (rows.empty()) throw DataError("cannot build an empty batch");
  if (!labels.empty() && labels.size() != rows.size()) throw ShapeError("pad_rows: label count mismatch");
  std::size_t longest = 0;
  for (const auto& r : rows) longest = std::max(longest, r.size());
  if (longest == 0) throw DataError("cannot build a batch of empty rows");
  const std::size_t len = pad_to ? pad_to : longest;
  if (longest > len) throw ShapeError("pad_rows: row of length " + std::to_string(longest) +
                                      " does not fit pad_to " + std::to_string(len));
  EncodedBatch b;
  b.batch = rows.size();
  b.len = len;
  b.ids.assign(b.batch * len, kPad);
  b.mask.assign(b.batch * len, 0);
  b.lengths.resize(b.batch);
  b.labels = labels.empty() ? std::vector<float>(b.batch, 0.0f) : std::move(labels);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), b.ids.begin() + static_cast<std::ptrdiff_t>(i * len));
    std::fill_n(b.mask.begin() + static_cast<std::ptrdiff_t>(i * len), rows[i].size(), 1);
    b.lengths[i] = rows[i].size();
  }
  return b;
}

EncodedBatch encode_batch(std::span<const ApiTrace> traces, const Vocabulary& vocab, std::size_t max_len,
                          std::size_t pad_to) {
  std::vector<std::vector<std::int32_t>> rows;
  std::vector<float> labels;
  rows.reserve(traces.size());
  for (const ApiTrace& t : traces) {
    rows.push_back(encode_ids(t.calls, vocab, max_len));
    labels.push_back(t.label == Label::malware ? 1.0f : 0.0f);
  }
  if (pad_to > max_len) throw ShapeError("encode_batch: pad_to exceeds max_len");
  return pad_rows(rows, std::move(labels), pad_to);
}

}  // namespace emd::corpus
