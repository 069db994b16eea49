#pragma once

// Building blocks shared by the generative LM and the contextual encoder.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emd/numerics/rng.hpp"
#include "emd/numerics/tape.hpp"
#include "emd/numerics/tensor.hpp"

namespace emd::nn {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// Uniform Xavier/Glorot initialization for a [fan_in, fan_out] matrix.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

std::vector<Tensor> tensors_of(const NamedParams& params);

/// Copies values from `src` into `dst` pairwise; names and shapes must agree.
void copy_parameters(const NamedParams& src, const NamedParams& dst);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  Tensor operator()(Tape& tape, const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  [[nodiscard]] std::size_t in_dim() const { return weight.dim(0); }
  [[nodiscard]] std::size_t out_dim() const { return weight.dim(1); }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);

  Tensor operator()(Tape& tape, const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// Attention permission for a right-padded batch.
///
/// Entry (b, i, j) is allowed iff positions i and j of row b are both real
/// and, when causal, j <= i. Fully disallowed rows (PAD queries) yield zero
/// attention output.
std::vector<std::uint8_t> attention_allow(std::span<const std::uint8_t> mask, std::size_t batch,
                                          std::size_t len, std::size_t heads, bool causal);

struct SelfAttention {
  Linear query, key, value, out;
  std::size_t heads = 1;

  SelfAttention() = default;
  SelfAttention(std::size_t dim, std::size_t heads, Rng& rng);

  /// x [B, L, D]; mask has B*L entries.
  Tensor operator()(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask, bool causal,
                    float attention_dropout) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

struct FeedForward {
  Linear up, down;

  FeedForward() = default;
  FeedForward(std::size_t dim, std::size_t hidden, Rng& rng);

  Tensor operator()(Tape& tape, const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// Transformer layer. Pre-norm (GPT style) when `pre_norm`, otherwise
/// post-norm (BERT style).
struct TransformerBlock {
  SelfAttention attention;
  FeedForward ff;
  LayerNorm norm1, norm2;
  bool pre_norm = true;

  TransformerBlock() = default;
  TransformerBlock(std::size_t dim, std::size_t heads, std::size_t ff_dim, bool pre_norm, Rng& rng);

  Tensor operator()(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask, bool causal,
                    float dropout, float attention_dropout) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// Token plus learned positional embedding for ids [B, L] -> [B, L, D].
Tensor embed_tokens(Tape& tape, const Tensor& token_table, const Tensor& position_table,
                    std::span<const std::int32_t> ids, std::size_t batch, std::size_t len);

}  // namespace emd::nn
