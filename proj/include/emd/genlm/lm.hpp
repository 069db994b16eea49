#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "emd/corpus/batch.hpp"
#include "emd/corpus/trace.hpp"
#include "emd/corpus/vocab.hpp"
#include "emd/nn/layers.hpp"

namespace emd::genlm {

struct LmConfig {
  std::size_t vocab_size = 0;
  std::size_t max_len = 128;
  std::size_t embed_dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ff_dim = 128;
  float dropout = 0.1f;
  std::uint64_t seed = 1;

  /// Same dims with the 500-token context used for full-size runs.
  static LmConfig paper_scale(std::size_t vocab_size);

  void validate() const;
  [[nodiscard]] nlohmann::ordered_json to_json() const;
  static LmConfig from_json(const nlohmann::json& j);
};

/// Decoder-only transformer over API-call ids.
///
/// Learned positional embeddings, pre-norm causal blocks, final layer norm
/// and an untied output projection.
class GenerativeLm {
 public:
  GenerativeLm(LmConfig cfg, std::uint64_t vocab_hash);

  [[nodiscard]] const LmConfig& config() const { return cfg_; }
  [[nodiscard]] std::uint64_t vocab_hash() const { return vocab_hash_; }

  /// ids [B, L] -> logits [B, L, V]; logits[b, t] scores token t + 1.
  Tensor forward(Tape& tape, std::span<const std::int32_t> ids, std::size_t batch, std::size_t len,
                 std::span<const std::uint8_t> mask) const;
  Tensor forward(Tape& tape, const corpus::EncodedBatch& batch) const;

  [[nodiscard]] nn::NamedParams parameters() const;

 private:
  LmConfig cfg_;
  std::uint64_t vocab_hash_;
  Tensor token_embedding_;
  Tensor position_embedding_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm final_norm_;
  nn::Linear head_;
};

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
};

struct LossCurve {
  std::vector<double> train;
  std::vector<double> dev;
};

/// Next-token training over non-PAD positions. Trace labels are never read.
LossCurve lm_train(GenerativeLm& model, const std::vector<corpus::ApiTrace>& train,
                   const std::vector<corpus::ApiTrace>& dev, const corpus::Vocabulary& vocab,
                   const TrainOptions& opts);

/// Token-weighted mean next-token cross-entropy.
double mean_next_token_loss(const GenerativeLm& model, const std::vector<corpus::ApiTrace>& traces,
                            const corpus::Vocabulary& vocab);
double perplexity(const GenerativeLm& model, const std::vector<corpus::ApiTrace>& traces,
                  const corpus::Vocabulary& vocab);

}  // namespace emd::genlm
