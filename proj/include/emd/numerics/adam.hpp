#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "emd/numerics/tensor.hpp"

namespace emd {

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every parameter from its grad buffer.
/// Moment buffers are created on the first call; afterwards their count and
/// sizes must match `params`.
void adam_step(std::span<Tensor> params, AdamState& state);

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

void zero_grads(std::span<Tensor> params);

}  // namespace emd
