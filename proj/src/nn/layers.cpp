#include "emd/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "emd/error.hpp"
#include "emd/numerics/ops.hpp"

namespace emd::nn {

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<float> w(fan_in * fan_out);
  for (float& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor::from({fan_in, fan_out}, std::move(w), true);
}

std::vector<Tensor> tensors_of(const NamedParams& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

void copy_parameters(const NamedParams& src, const NamedParams& dst) {
  if (src.size() != dst.size()) throw ShapeError("copy_parameters: parameter counts differ");
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto& [sn, st] = src[i];
    const auto& [dn, dt] = dst[i];
    if (sn != dn || st.shape() != dt.shape()) {
      throw ShapeError("copy_parameters: " + sn + " " + shape_str(st.shape()) + " vs " + dn + " " +
                       shape_str(dt.shape()));
    }
    Tensor target = dt;
    std::copy(st.data().begin(), st.data().end(), target.data().begin());
  }
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(xavier_uniform(in, out, rng)), bias(Tensor::zeros({out}, true)) {}

Tensor Linear::operator()(Tape& tape, const Tensor& x) const {
  return ops::add_bias(tape, ops::matmul(tape, x, weight), bias);
}

void Linear::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(std::size_t dim)
    : gamma(Tensor::full({dim}, 1.0f, true)), beta(Tensor::zeros({dim}, true)) {}

Tensor LayerNorm::operator()(Tape& tape, const Tensor& x) const {
  return ops::layer_norm(tape, x, gamma, beta);
}

void LayerNorm::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

std::vector<std::uint8_t> attention_allow(std::span<const std::uint8_t> mask, std::size_t batch,
                                          std::size_t len, std::size_t heads, bool causal) {
  if (mask.size() != batch * len) throw ShapeError("attention mask size does not match batch");
  std::vector<std::uint8_t> allow(batch * heads * len * len, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      std::uint8_t* block = allow.data() + (b * heads + h) * len * len;
      for (std::size_t i = 0; i < len; ++i) {
        if (!mask[b * len + i]) continue;
        for (std::size_t j = 0; j < len; ++j) {
          if (causal && j > i) break;
          block[i * len + j] = mask[b * len + j];
        }
      }
    }
  }
  return allow;
}

SelfAttention::SelfAttention(std::size_t dim, std::size_t n_heads, Rng& rng)
    : query(dim, dim, rng), key(dim, dim, rng), value(dim, dim, rng), out(dim, dim, rng), heads(n_heads) {
  if (n_heads == 0 || dim % n_heads != 0) {
    throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
}

Tensor SelfAttention::operator()(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask,
                                 bool causal, float attention_dropout) const {
  const std::size_t batch = x.dim(0), len = x.dim(1), dim = x.dim(2);
  const std::size_t head_dim = dim / heads;
  auto split = [&](const Tensor& t) {
    Tensor r = ops::reshape(tape, t, {batch, len, heads, head_dim});
    return ops::reshape(tape, ops::permute_0213(tape, r), {batch * heads, len, head_dim});
  };
  Tensor q = split(query(tape, x));
  Tensor k = split(key(tape, x));
  Tensor v = split(value(tape, x));
  Tensor scores = ops::scale(tape, ops::bmm(tape, q, k, true),
                             static_cast<float>(1.0 / std::sqrt(static_cast<double>(head_dim))));
  const auto allow = attention_allow(mask, batch, len, heads, causal);
  Tensor weights = ops::dropout(tape, ops::masked_softmax(tape, scores, allow), attention_dropout);
  Tensor ctx = ops::bmm(tape, weights, v);
  ctx = ops::permute_0213(tape, ops::reshape(tape, ctx, {batch, heads, len, head_dim}));
  return out(tape, ops::reshape(tape, ctx, {batch, len, dim}));
}

void SelfAttention::collect(const std::string& prefix, NamedParams& params) const {
  query.collect(prefix + ".query", params);
  key.collect(prefix + ".key", params);
  value.collect(prefix + ".value", params);
  out.collect(prefix + ".out", params);
}

FeedForward::FeedForward(std::size_t dim, std::size_t hidden, Rng& rng) : up(dim, hidden, rng), down(hidden, dim, rng) {}

Tensor FeedForward::operator()(Tape& tape, const Tensor& x) const {
  return down(tape, ops::gelu(tape, up(tape, x)));
}

void FeedForward::collect(const std::string& prefix, NamedParams& out) const {
  up.collect(prefix + ".up", out);
  down.collect(prefix + ".down", out);
}

TransformerBlock::TransformerBlock(std::size_t dim, std::size_t heads, std::size_t ff_dim, bool pre,
                                   Rng& rng)
    : attention(dim, heads, rng), ff(dim, ff_dim, rng), norm1(dim), norm2(dim), pre_norm(pre) {}

Tensor TransformerBlock::operator()(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask,
                                    bool causal, float dropout, float attention_dropout) const {
  if (pre_norm) {
    Tensor h = ops::add(tape, x,
                        ops::dropout(tape, attention(tape, norm1(tape, x), mask, causal, attention_dropout),
                                     dropout));
    return ops::add(tape, h, ops::dropout(tape, ff(tape, norm2(tape, h)), dropout));
  }
  Tensor h = norm1(tape, ops::add(tape, x,
                                  ops::dropout(tape, attention(tape, x, mask, causal, attention_dropout),
                                               dropout)));
  return norm2(tape, ops::add(tape, h, ops::dropout(tape, ff(tape, h), dropout)));
}

void TransformerBlock::collect(const std::string& prefix, NamedParams& out) const {
  attention.collect(prefix + ".attention", out);
  ff.collect(prefix + ".ff", out);
  norm1.collect(prefix + ".norm1", out);
  norm2.collect(prefix + ".norm2", out);
}

Tensor embed_tokens(Tape& tape, const Tensor& token_table, const Tensor& position_table,
                    std::span<const std::int32_t> ids, std::size_t batch, std::size_t len) {
  if (ids.size() != batch * len) throw ShapeError("embed_tokens: id count does not match batch");
  if (len > position_table.dim(0)) {
    throw ShapeError("sequence length " + std::to_string(len) + " exceeds max_len " +
                     std::to_string(position_table.dim(0)));
  }
  const std::size_t dim = token_table.dim(1);
  std::vector<std::int32_t> positions(batch * len);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i % len);
  Tensor tok = ops::embedding(tape, token_table, ids);
  Tensor pos = ops::embedding(tape, position_table, positions);
  return ops::reshape(tape, ops::add(tape, tok, pos), {batch, len, dim});
}

}  // namespace emd::nn
