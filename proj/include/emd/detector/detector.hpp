#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "emd/corpus/trace.hpp"
#include "emd/corpus/vocab.hpp"
#include "emd/encoder/encoder.hpp"
#include "emd/genlm/generate.hpp"
#include "emd/head/head.hpp"

namespace emd::detector {

inline constexpr float kDefaultThreshold = 0.5f;

struct TrainingMeta {
  std::uint64_t seed = 1;
  std::size_t epochs = 0;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  bool freeze_encoder = false;

  [[nodiscard]] nlohmann::ordered_json to_json() const;
  static TrainingMeta from_json(const nlohmann::json& j);
};

/// Contextual encoder followed by a classification head.
class DetectorModel {
 public:
  DetectorModel(encoder::EncoderConfig enc_cfg, head::HeadConfig head_cfg, std::uint64_t vocab_hash);
  /// Starts from a copy of `pretrained`; later training never touches it.
  DetectorModel(const encoder::ContextualEncoder& pretrained, head::HeadConfig head_cfg);

  [[nodiscard]] const encoder::ContextualEncoder& encoder() const { return encoder_; }
  [[nodiscard]] const head::Head& head() const { return head_; }
  [[nodiscard]] std::uint64_t vocab_hash() const { return encoder_.vocab_hash(); }
  [[nodiscard]] std::size_t max_len() const { return encoder_.config().max_len; }

  TrainingMeta meta;

  /// Malware probability per row of a right-padded batch, [B].
  Tensor forward(Tape& tape, std::span<const std::int32_t> ids, std::size_t batch, std::size_t len,
                 std::span<const std::uint8_t> mask) const;

  /// Encoder parameters prefixed "encoder.", then head parameters prefixed "head.".
  [[nodiscard]] nn::NamedParams parameters() const;
  /// Stable digest of both configurations.
  [[nodiscard]] std::string config_hash() const;

 private:
  encoder::ContextualEncoder encoder_;
  head::Head head_;
};

struct DetectorOptions {
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  bool freeze_encoder = false;
};

struct DetectorCurve {
  std::vector<double> train_loss;
  std::vector<double> dev_loss;
  std::vector<double> dev_accuracy;
};

/// Minimizes binary cross-entropy over labeled traces (BOS + calls + EOS).
DetectorCurve train_detector(DetectorModel& model, const std::vector<corpus::ApiTrace>& train,
                             const std::vector<corpus::ApiTrace>& dev, const corpus::Vocabulary& vocab,
                             const DetectorOptions& opts);

/// Probabilities for unpadded id rows, evaluated in padded chunks.
std::vector<float> score_rows(const DetectorModel& model, const std::vector<std::vector<std::int32_t>>& rows);

/// Probabilities for full traces.
std::vector<float> score_traces(const DetectorModel& model, const std::vector<corpus::ApiTrace>& traces,
                                const corpus::Vocabulary& vocab);

struct Verdict {
  float probability = 0.0f;
  corpus::Label label = corpus::Label::benign;
  std::size_t prefix_used = 0;
  std::vector<std::string> suffix;
  std::size_t extended_len = 0;
};

corpus::Label label_for(float probability, float threshold);

/// Classifies one right-padded row of ids (BOS ... EOS).
Verdict classify_ids(const DetectorModel& model, std::span<const std::int32_t> ids,
                     std::span<const std::uint8_t> mask, float threshold = kDefaultThreshold);
/// Classifies a full call list.
Verdict classify_trace(const DetectorModel& model, const corpus::Vocabulary& vocab,
                       std::span<const std::string> calls, float threshold = kDefaultThreshold);

struct EarlyDetectConfig {
  std::size_t prefix_len = 20;
  std::size_t horizon = 10;
  genlm::Strategy strategy = genlm::Strategy::greedy;
  std::size_t k = 5;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  float threshold = kDefaultThreshold;

  void validate() const;
  [[nodiscard]] nlohmann::ordered_json to_json() const;
};

/// Prefix -> predicted suffix -> classification of prefix + suffix. Reads at
/// most `prefix_len` calls of the trace.
Verdict early_detect(const genlm::GenerativeLm& lm, const DetectorModel& model, const corpus::Vocabulary& vocab,
                     std::span<const std::string> calls, const EarlyDetectConfig& cfg);

/// Classification of the bare prefix with no predicted calls.
Verdict prefix_only(const DetectorModel& model, const corpus::Vocabulary& vocab, std::span<const std::string> calls,
                    std::size_t prefix_len, float threshold = kDefaultThreshold);

struct TraceError {
  std::size_t index = 0;
  std::string trace_id;
  std::string message;
};

struct BatchVerdicts {
  /// One entry per input trace; failed traces keep a default Verdict.
  std::vector<Verdict> verdicts;
  std::vector<float> scores;
  std::vector<bool> ok;
  std::vector<TraceError> errors;
};

/// early_detect over many traces in input order. A failing trace is recorded
/// with its id and the rest of the batch continues.
BatchVerdicts batch_detect(const genlm::GenerativeLm& lm, const DetectorModel& model,
                           const corpus::Vocabulary& vocab, const std::vector<corpus::ApiTrace>& traces,
                           const EarlyDetectConfig& cfg);

/// Throws CompatError unless the LM, model and vocabulary agree.
void check_compatible(const genlm::GenerativeLm& lm, const DetectorModel& model, const corpus::Vocabulary& vocab);

}  // namespace emd::detector
