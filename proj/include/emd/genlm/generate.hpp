#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "emd/genlm/lm.hpp"

namespace emd::genlm {

enum class Strategy { greedy, topk };

Strategy parse_strategy(std::string_view text);
std::string_view strategy_name(Strategy s);

struct GenRequest {
  std::vector<std::int32_t> prefix;
  std::size_t horizon = 1;
  Strategy strategy = Strategy::greedy;
  std::size_t k = 5;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

/// True for ids that are never generated or predicted: PAD, BOS and EOS.
bool excluded_from_generation(std::int32_t id);

/// Distribution of the token following `prefix`, with PAD/BOS/EOS masked out.
std::vector<float> predict_next(const GenerativeLm& model, std::span<const std::int32_t> prefix);

/// Emits exactly `horizon` ids autoregressively.
std::vector<std::int32_t> generate_suffix(const GenerativeLm& model, const GenRequest& req);

/// Runs generate_suffix for many prefixes at once; row i equals
/// generate_suffix with prefix `prefixes[i]` and the shared settings.
std::vector<std::vector<std::int32_t>> generate_batch(const GenerativeLm& model,
                                                      const std::vector<std::vector<std::int32_t>>& prefixes,
                                                      const GenRequest& settings);

/// prefix followed by suffix; throws when the result exceeds max_len or the
/// suffix is empty.
std::vector<std::int32_t> assemble_extended(std::span<const std::int32_t> prefix,
                                            std::span<const std::int32_t> suffix, std::size_t max_len);

}  // namespace emd::genlm
