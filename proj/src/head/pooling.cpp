#include "emd/head/pooling.hpp"

#include <cmath>

#include "emd/error.hpp"
#include "emd/numerics/ops.hpp"

namespace emd::head {

PoolResult attention_pool(Tape& tape, const Tensor& states, std::span<const std::uint8_t> mask) {
  if (states.rank() != 3) throw ShapeError("attention_pool: expected [B, L, C], got " + shape_str(states.shape()));
  const std::size_t batch = states.dim(0), len = states.dim(1), width = states.dim(2);
  if (mask.size() != batch * len) throw ShapeError("attention_pool: mask size mismatch");
  for (std::size_t b = 0; b < batch; ++b) {
    bool any = false;
    for (std::size_t t = 0; t < len && !any; ++t) any = mask[b * len + t] != 0;
    if (!any) throw DataError("attention_pool: row " + std::to_string(b) + " has no real tokens");
  }
  Tensor h = ops::mask_positions(tape, states, mask);
  // sum_u E[t, u] = h_t . (sum_u h_u) / sqrt(C)
  Tensor total = ops::reshape(tape, ops::sum_positions(tape, h), {batch, width, 1});
  Tensor scores = ops::scale(tape, ops::bmm(tape, h, total), static_cast<float>(1.0 / std::sqrt(static_cast<double>(width))));
  Tensor weights = ops::masked_softmax(tape, ops::reshape(tape, scores, {batch, len}), mask);
  Tensor context = ops::bmm(tape, ops::reshape(tape, weights, {batch, 1, len}), h);
  return {ops::reshape(tape, context, {batch, width}), weights};
}

DenseStack::DenseStack(std::size_t input_dim, Rng& rng)
    : hidden1(input_dim, kHidden1, rng), hidden2(kHidden1, kHidden2, rng), output(kHidden2, 1, rng) {}

Tensor DenseStack::operator()(Tape& tape, const Tensor& context) const {
  if (context.rank() != 2 || context.dim(1) != hidden1.in_dim()) {
    throw ShapeError("dense stack: expected [B, " + std::to_string(hidden1.in_dim()) + "], got " +
                     shape_str(context.shape()));
  }
  Tensor x = ops::relu(tape, hidden1(tape, context));
  x = ops::relu(tape, hidden2(tape, x));
  Tensor p = ops::sigmoid(tape, output(tape, x));
  return ops::reshape(tape, p, {context.dim(0)});
}

void DenseStack::collect(const std::string& prefix, nn::NamedParams& out) const {
  hidden1.collect(prefix + ".hidden1", out);
  hidden2.collect(prefix + ".hidden2", out);
  output.collect(prefix + ".output", out);
}

}  // namespace emd::head
