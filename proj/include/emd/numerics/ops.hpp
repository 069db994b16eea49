#pragma once

// Differentiable tensor operations. Each op computes its output eagerly and,
// when the tape is recording and an input requires grad, records a backward
// rule on the tape.

#include <cstddef>
#include <cstdint>
#include <span>

#include "emd/numerics/tape.hpp"
#include "emd/numerics/tensor.hpp"

namespace emd::ops {

/// a[..., K] x b[K, N] -> [..., N]; leading dims of `a` are flattened into rows.
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
/// Batched product a[B, M, K] x b[B, K, N], or b[B, N, K] when transpose_b.
Tensor bmm(Tape& tape, const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
/// x[..., N] + bias[N]
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);
Tensor scale(Tape& tape, const Tensor& x, float factor);

Tensor relu(Tape& tape, const Tensor& x);
/// Exact (erf) GELU.
Tensor gelu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor tanh(Tape& tape, const Tensor& x);

/// Softmax along `axis`, max-subtracted.
Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis);
/// Softmax along the last axis over entries with allow != 0. Disallowed
/// entries are exactly zero; rows with nothing allowed are all zero.
Tensor masked_softmax(Tape& tape, const Tensor& x, std::span<const std::uint8_t> allow);

/// Normalizes over the last axis, then applies gamma/beta.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);

/// Rows of table[V, D] selected by ids -> [ids.size(), D].
Tensor embedding(Tape& tape, const Tensor& table, std::span<const std::int32_t> ids);

Tensor reshape(Tape& tape, const Tensor& x, Shape shape);
/// [A, B, C, D] -> [A, C, B, D]
Tensor permute_0213(Tape& tape, const Tensor& x);
/// Inverted dropout; identity unless the tape is in training mode.
Tensor dropout(Tape& tape, const Tensor& x, float rate);
Tensor concat_last(Tape& tape, const Tensor& a, const Tensor& b);

Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);

// Sequence helpers over x[B, L, C] with a {0,1} position mask of length B*L.

/// Zeroes positions whose mask is 0.
Tensor mask_positions(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask);
/// x[b, positions[b], :] -> [B, C]
Tensor select_positions(Tape& tape, const Tensor& x, std::span<const std::size_t> positions);
/// Sum over L -> [B, C]
Tensor sum_positions(Tape& tape, const Tensor& x);
/// Max over positions with mask 1 -> [B, C]
Tensor max_positions(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask);
/// Centered sliding window of odd `width` with zero padding -> [B, L, width*C].
Tensor unfold_positions(Tape& tape, const Tensor& x, std::size_t width);

/// Weighted mean next-token cross-entropy. logits[N, V]; rows with weight 0
/// are skipped.
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::int32_t> targets,
                     std::span<const float> weights);

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
Tensor bce(Tape& tape, const Tensor& probs, std::span<const float> labels);

inline constexpr float kProbClamp = 1e-7f;

// Recurrent sequence ops. `xproj` already holds the input projection plus bias
// for every position; `recurrent` is the hidden-to-hidden matrix. Row b runs
// over positions [0, lengths[b]) (or in reverse); positions past the length
// produce zero states. Output is [B, L, H].

/// Gate layout [update | reset | candidate]:
///   z = s(xz + h Uz), r = s(xr + h Ur), c = tanh(xc + (r*h) Uc), h' = (1-z) h + z c
Tensor gru_sequence(Tape& tape, const Tensor& xproj, const Tensor& recurrent,
                    std::span<const std::size_t> lengths, bool reverse);
/// Gate layout [input | forget | cell | output]:
///   c' = f c + i g, h' = o tanh(c')
Tensor lstm_sequence(Tape& tape, const Tensor& xproj, const Tensor& recurrent,
                     std::span<const std::size_t> lengths, bool reverse);

}  // namespace emd::ops
