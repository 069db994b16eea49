#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "emd/corpus/batch.hpp"
#include "emd/corpus/trace.hpp"
#include "emd/corpus/vocab.hpp"
#include "emd/nn/layers.hpp"

namespace emd::encoder {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t max_len = 128;
  std::size_t embed_dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ff_dim = 128;
  float dropout = 0.1f;
  float attention_dropout = 0.1f;
  std::uint64_t seed = 1;

  /// Dimensions of the distilled six-layer encoder (768 wide, 12 heads,
  /// 3072 feed-forward, 512 positions, 30522 tokens). Kept as a named
  /// configuration for documentation; far too large for the desk pipeline.
  static EncoderConfig paper_scale();

  void validate() const;
  [[nodiscard]] nlohmann::ordered_json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

/// Bidirectional post-norm transformer encoder with an optional masked-token
/// prediction head.
class ContextualEncoder {
 public:
  ContextualEncoder(EncoderConfig cfg, std::uint64_t vocab_hash);

  [[nodiscard]] const EncoderConfig& config() const { return cfg_; }
  [[nodiscard]] std::uint64_t vocab_hash() const { return vocab_hash_; }

  /// ids [B, L] -> [B, L, D]. Real positions never read PAD positions;
  /// vectors at PAD positions are meaningless and must be masked downstream.
  Tensor encode(Tape& tape, std::span<const std::int32_t> ids, std::size_t batch, std::size_t len,
                std::span<const std::uint8_t> mask) const;
  Tensor encode(Tape& tape, const corpus::EncodedBatch& batch) const;

  /// Masked-token logits [B, L, V] from encoder output.
  Tensor mlm_logits(Tape& tape, const Tensor& hidden) const;

  /// Encoder parameters only (what the detector fine-tunes or freezes).
  [[nodiscard]] nn::NamedParams parameters() const;
  [[nodiscard]] nn::NamedParams mlm_parameters() const;

 private:
  EncoderConfig cfg_;
  std::uint64_t vocab_hash_;
  Tensor token_embedding_;
  Tensor position_embedding_;
  nn::LayerNorm embed_norm_;
  std::vector<nn::TransformerBlock> blocks_;
  // masked-token head: transform, GELU, norm, projection
  nn::Linear mlm_transform_;
  nn::LayerNorm mlm_norm_;
  nn::Linear mlm_projection_;
};

struct MlmOptions {
  double mask_rate = 0.15;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
};

struct MlmCurve {
  std::vector<double> loss;
};

/// Positions selected for masking in one encoded row: each real non-BOS/EOS
/// position independently with probability mask_rate, at least one per row.
std::vector<std::size_t> choose_mask_positions(std::span<const std::int32_t> row_ids, std::size_t length,
                                               double mask_rate, Rng& rng);

/// Masked-token pretraining: selected positions are replaced by UNK in the
/// input and reconstructed through the masked-token head. Labels are never read.
MlmCurve mlm_pretrain(ContextualEncoder& enc, const std::vector<corpus::ApiTrace>& traces,
                      const corpus::Vocabulary& vocab, const MlmOptions& opts);

/// Fraction of masked positions whose argmax reconstruction is correct.
double mlm_accuracy(const ContextualEncoder& enc, const std::vector<corpus::ApiTrace>& traces,
                    const corpus::Vocabulary& vocab, double mask_rate, std::uint64_t seed);

}  // namespace emd::encoder
