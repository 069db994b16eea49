#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "emd/nn/layers.hpp"

namespace emd::head {

/// Plain-vector GRU weights: w [D, 3H], u [H, 3H], b [3H], gate blocks in
/// the order update, reset, candidate.
struct GruParams {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  std::vector<float> w;
  std::vector<float> u;
  std::vector<float> b;
};

/// One GRU step:
///   z = s(Wz x + Uz h + bz), r = s(Wr x + Ur h + br),
///   c = tanh(Wc x + Uc (r*h) + bc), h' = (1 - z) h + z c
std::vector<float> gru_step(const GruParams& p, std::span<const float> x, std::span<const float> h_prev);

enum class CellKind { gru, lstm };

/// One direction of a recurrent layer: input projection (with bias) followed
/// by the fused recurrence.
struct RecurrentLayer {
  CellKind cell = CellKind::gru;
  nn::Linear input;
  Tensor recurrent;  // [H, G*H]

  RecurrentLayer() = default;
  RecurrentLayer(CellKind cell, std::size_t input_dim, std::size_t hidden, Rng& rng);

  [[nodiscard]] std::size_t hidden() const { return recurrent.dim(0); }
  /// x [B, L, D] -> [B, L, H]; positions at or past lengths[b] are zero.
  Tensor operator()(Tape& tape, const Tensor& x, std::span<const std::size_t> lengths, bool reverse) const;
  void collect(const std::string& prefix, nn::NamedParams& out) const;
  /// GRU weights as plain vectors (cell must be gru).
  [[nodiscard]] GruParams gru_params() const;
};

/// Real-token count per row; throws unless each row's mask is a 1-run followed by 0s.
std::vector<std::size_t> lengths_from_mask(std::span<const std::uint8_t> mask, std::size_t batch, std::size_t len);

/// [forward ; backward] states per position -> [B, L, 2H]; PAD positions are zero.
Tensor bigru_forward(Tape& tape, const RecurrentLayer& forward, const RecurrentLayer& backward, const Tensor& x,
                     std::span<const std::uint8_t> mask);

}  // namespace emd::head
