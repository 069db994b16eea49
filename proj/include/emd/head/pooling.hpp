#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "emd/nn/layers.hpp"

namespace emd::head {

struct PoolResult {
  Tensor context;  // [B, C]
  Tensor weights;  // [B, L]
};

/// Parameter-free self-attention pooling over states h [B, L, C].
///
/// Pairwise scores E = h h^T / sqrt(C) over real tokens; each token's
/// relevance is its row sum s_t = sum_u E[t, u]; weights are softmax(s) over
/// real tokens (exactly 0 on PAD) and the context is sum_t a_t h_t.
PoolResult attention_pool(Tape& tape, const Tensor& states, std::span<const std::uint8_t> mask);

/// Fully connected classifier: in -> 64 (ReLU) -> 32 (ReLU) -> 1 (sigmoid).
struct DenseStack {
  nn::Linear hidden1, hidden2, output;

  static constexpr std::size_t kHidden1 = 64;
  static constexpr std::size_t kHidden2 = 32;

  DenseStack() = default;
  DenseStack(std::size_t input_dim, Rng& rng);

  /// context [B, in] -> malware probability [B]
  Tensor operator()(Tape& tape, const Tensor& context) const;
  void collect(const std::string& prefix, nn::NamedParams& out) const;
};

}  // namespace emd::head
