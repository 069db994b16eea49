#include "emd/genlm/generate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "emd/error.hpp"
#include "emd/numerics/kernels.hpp"

namespace emd::genlm {
namespace {

constexpr std::size_t kGenerationChunk = 64;

std::vector<std::uint8_t> allowed_next(std::size_t vocab) {
  std::vector<std::uint8_t> allow(vocab, 1);
  for (std::size_t id = 0; id < vocab; ++id) {
    if (excluded_from_generation(static_cast<std::int32_t>(id))) allow[id] = 0;
  }
  return allow;
}

std::vector<float> next_distribution(std::span<const float> logits, std::span<const std::uint8_t> allow) {
  std::vector<float> p(logits.size());
  kernels::serial::softmax_rows(1, logits.size(), logits.data(), allow.data(), p.data());
  return p;
}

// Highest probability first, lowest id on ties.
std::vector<std::int32_t> ranked(std::span<const float> probs, std::span<const std::uint8_t> allow) {
  std::vector<std::int32_t> ids;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (allow[i]) ids.push_back(static_cast<std::int32_t>(i));
  }
  std::stable_sort(ids.begin(), ids.end(), [&](std::int32_t a, std::int32_t b) { return probs[a] > probs[b]; });
  return ids;
}

std::int32_t choose(std::span<const float> logits, std::span<const std::uint8_t> allow, const GenRequest& req,
                    Rng& rng) {
  const std::vector<float> probs = next_distribution(logits, allow);
  const std::vector<std::int32_t> order = ranked(probs, allow);
  if (order.empty()) throw DataError("generation: no token is eligible");
  if (req.strategy == Strategy::greedy) return order.front();
  const std::size_t k = std::min(req.k, order.size());
  std::vector<double> w(k);
  double mx = -INFINITY;
  for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, static_cast<double>(logits[order[i]]) / req.temperature);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = std::exp(static_cast<double>(logits[order[i]]) / req.temperature - mx);
    total += w[i];
  }
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < k; ++i) {
    if (u < w[i]) return order[i];
    u -= w[i];
  }
  return order[k - 1];
}

void check_request(const GenerativeLm& model, std::span<const std::int32_t> prefix, const GenRequest& req) {
  if (prefix.empty()) throw DataError("generation: empty prefix");
  if (req.horizon < 1) throw ConfigError("generation: horizon must be at least 1");
  if (req.strategy == Strategy::topk) {
    if (req.k < 1 || req.k > model.config().vocab_size) throw ConfigError("generation: k must be in [1, vocab_size]");
    if (!(req.temperature > 0.0)) throw ConfigError("generation: temperature must be positive");
  }
  if (prefix.size() + req.horizon > model.config().max_len) {
    throw ConfigError("generation: prefix " + std::to_string(prefix.size()) + " + horizon " +
                      std::to_string(req.horizon) + " exceeds max_len " + std::to_string(model.config().max_len));
  }
  for (std::int32_t id : prefix) {
    if (id < 0 || static_cast<std::size_t>(id) >= model.config().vocab_size) {
      throw DataError("generation: prefix id " + std::to_string(id) + " outside the vocabulary");
    }
  }
}

// Logits of the final real position of every row.
std::vector<std::vector<float>> last_logits(const GenerativeLm& model,
                                            const std::vector<std::vector<std::int32_t>>& rows) {
  const auto batch = corpus::pad_rows(rows, {});
  Tape tape = Tape::inference();
  Tensor logits = model.forward(tape, batch);
  const std::size_t v = model.config().vocab_size;
  auto data = logits.data();
  std::vector<std::vector<float>> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t t = rows[r].size() - 1;
    const auto first = data.begin() + static_cast<std::ptrdiff_t>((r * batch.len + t) * v);
    out[r].assign(first, first + static_cast<std::ptrdiff_t>(v));
  }
  return out;
}

}  // namespace

Strategy parse_strategy(std::string_view text) {
  if (text == "greedy") return Strategy::greedy;
  if (text == "topk") return Strategy::topk;
  throw ConfigError("unknown strategy '" + std::string(text) + "' (expected greedy or topk)");
}

std::string_view strategy_name(Strategy s) { return s == Strategy::greedy ? "greedy" : "topk"; }

bool excluded_from_generation(std::int32_t id) {
  return id == corpus::kPad || id == corpus::kBos || id == corpus::kEos;
}

std::vector<float> predict_next(const GenerativeLm& model, std::span<const std::int32_t> prefix) {
  if (prefix.empty()) throw DataError("predict_next: empty prefix");
  if (prefix.size() > model.config().max_len - 1) {
    throw ConfigError("predict_next: prefix longer than max_len - 1");
  }
  const auto logits = last_logits(model, {std::vector<std::int32_t>(prefix.begin(), prefix.end())});
  return next_distribution(logits.front(), allowed_next(model.config().vocab_size));
}

std::vector<std::vector<std::int32_t>> generate_batch(const GenerativeLm& model,
                                                      const std::vector<std::vector<std::int32_t>>& prefixes,
                                                      const GenRequest& settings) {
  for (const auto& p : prefixes) check_request(model, p, settings);
  const auto allow = allowed_next(model.config().vocab_size);
  std::vector<std::vector<std::int32_t>> suffixes(prefixes.size());
  for (std::size_t start = 0; start < prefixes.size(); start += kGenerationChunk) {
    const std::size_t n = std::min(kGenerationChunk, prefixes.size() - start);
    std::vector<std::vector<std::int32_t>> rows(prefixes.begin() + static_cast<std::ptrdiff_t>(start),
                                                prefixes.begin() + static_cast<std::ptrdiff_t>(start + n));
    std::vector<Rng> rngs(n, Rng(settings.seed));
    for (std::size_t step = 0; step < settings.horizon; ++step) {
      const auto logits = last_logits(model, rows);
      for (std::size_t r = 0; r < n; ++r) {
        const std::int32_t next = choose(logits[r], allow, settings, rngs[r]);
        rows[r].push_back(next);
        suffixes[start + r].push_back(next);
      }
    }
  }
  return suffixes;
}

std::vector<std::int32_t> generate_suffix(const GenerativeLm& model, const GenRequest& req) {
  return generate_batch(model, {req.prefix}, req).front();
}

std::vector<std::int32_t> assemble_extended(std::span<const std::int32_t> prefix,
                                            std::span<const std::int32_t> suffix, std::size_t max_len) {
  if (suffix.empty()) throw ConfigError("assemble_extended: suffix must hold at least one call");
  if (prefix.size() + suffix.size() > max_len) {
    throw ConfigError("assemble_extended: " + std::to_string(prefix.size() + suffix.size()) +
                      " calls exceed capacity " + std::to_string(max_len));
  }
  std::vector<std::int32_t> out(prefix.begin(), prefix.end());
  out.insert(out.end(), suffix.begin(), suffix.end());
  return out;
}

}  // namespace emd::genlm
