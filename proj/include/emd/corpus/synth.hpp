#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emd/corpus/trace.hpp"

namespace emd::corpus {

using Motif = std::vector<std::string>;

/// Parameters of the synthetic sandbox-trace generator.
///
/// Traces are walks of a motif-level Markov chain over benign motifs.
/// Malware traces belong to a family (one per malicious motif): their
/// background walk is biased toward a family-specific subset of benign
/// motifs, and their family's malicious motif is planted at a motif boundary
/// at or after `motif_onset_min` (each boundary with probability `onset_rate`),
/// then repeated every few motifs.
struct SynthConfig {
  std::size_t vocab_size = 120;
  std::size_t n_traces = 2000;
  double malware_fraction = 0.5;
  /// Left empty, motifs are drawn from the generated API-name pool.
  std::vector<Motif> benign_motifs;
  std::vector<Motif> malicious_motifs;
  std::size_t motif_onset_min = 20;
  /// Probability of planting the first motif at each boundary past onset_min.
  double onset_rate = 0.5;
  /// The first motif starts no later than the first boundary at or after
  /// onset_min + onset_spread.
  std::size_t onset_spread = 20;
  std::size_t min_len = 56;
  std::size_t max_len = 72;
  /// Probability that a malware background step jumps into the family subset.
  double family_bias = 0.8;
  /// Background tokens between repeated malicious motifs.
  std::size_t repeat_gap_min = 6;
  std::size_t repeat_gap_max = 12;
  std::uint64_t seed = 7;
};

/// Generator defaults for motif counts when none are configured.
inline constexpr std::size_t kDefaultBenignMotifs = 20;
inline constexpr std::size_t kDefaultMaliciousMotifs = 3;

/// Throws ConfigError when the configuration is unusable.
void validate(const SynthConfig& cfg);

/// API-call names used by the generator: realistic Windows API names first,
/// then numbered fillers up to `count`.
std::vector<std::string> api_name_pool(std::size_t count);

struct SynthCorpus {
  std::vector<ApiTrace> traces;
  std::vector<Motif> benign_motifs;
  std::vector<Motif> malicious_motifs;
  /// Start index of the first planted motif for each trace (-1 for benign).
  std::vector<long> onsets;
  /// Malware family per trace (-1 for benign).
  std::vector<int> families;
};

SynthCorpus generate_synthetic_corpus(const SynthConfig& cfg);
std::vector<ApiTrace> generate_synthetic(const SynthConfig& cfg);

/// Start of the first occurrence of `motif` in `calls` at index >= from, or -1.
long find_motif(const std::vector<std::string>& calls, const Motif& motif, std::size_t from = 0);

}  // namespace emd::corpus
