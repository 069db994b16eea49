#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "emd/corpus/trace.hpp"
#include "emd/corpus/vocab.hpp"

namespace emd::corpus {

struct EncodedSequence {
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;
  std::size_t length = 0;
};

/// BOS + mapped ids (+ EOS when it fits), truncated on the right and padded
/// with PAD to exactly `max_len`.
EncodedSequence encode(std::span<const std::string> calls, const Vocabulary& vocab, std::size_t max_len,
                       bool add_eos = true);

/// Drops reserved ids and maps the rest back to names.
std::vector<std::string> decode(std::span<const std::int32_t> ids, const Vocabulary& vocab);

/// Right-padded B x L id matrix with its mask. mask[i, j] = 1 iff j < lengths[i].
struct EncodedBatch {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;
  std::vector<float> labels;
  std::vector<std::size_t> lengths;

  [[nodiscard]] std::int32_t at(std::size_t row, std::size_t col) const { return ids[row * len + col]; }
};

/// Pads unpadded id rows to `pad_to` (or to the longest row when 0).
EncodedBatch pad_rows(const std::vector<std::vector<std::int32_t>>& rows, std::vector<float> labels,
                      std::size_t pad_to = 0);

/// Encodes traces (BOS ... EOS, truncated to max_len) into one batch.
EncodedBatch encode_batch(std::span<const ApiTrace> traces, const Vocabulary& vocab, std::size_t max_len,
                          std::size_t pad_to = 0);

/// Unpadded BOS + ids (+ EOS) of one call list, truncated to max_len.
std::vector<std::int32_t> encode_ids(std::span<const std::string> calls, const Vocabulary& vocab,
                                     std::size_t max_len, bool add_eos = true);

}  // namespace emd::corpus
