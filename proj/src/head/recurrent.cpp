#include "emd/head/recurrent.hpp"

#include <cmath>

#include "emd/error.hpp"
#include "emd/numerics/ops.hpp"

namespace emd::head {
namespace {

float sigmoid(double v) { return static_cast<float>(v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v))); }

Tensor recurrent_init(std::size_t hidden, std::size_t gates, Rng& rng) {
  return nn::xavier_uniform(hidden, gates * hidden, rng);
}

}  // namespace

std::vector<float> gru_step(const GruParams& p, std::span<const float> x, std::span<const float> h_prev) {
  const std::size_t D = p.input_dim, H = p.hidden, G = 3 * H;
  if (x.size() != D || h_prev.size() != H || p.w.size() != D * G || p.u.size() != H * G || p.b.size() != G) {
    throw ShapeError("gru_step: dimension mismatch (D=" + std::to_string(D) + ", H=" + std::to_string(H) +
                     ", x=" + std::to_string(x.size()) + ", h=" + std::to_string(h_prev.size()) + ")");
  }
  std::vector<double> a(G);
  for (std::size_t j = 0; j < G; ++j) a[j] = p.b[j];
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < G; ++j) a[j] += static_cast<double>(x[i]) * p.w[i * G + j];
  std::vector<double> z(H), r(H);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < 2 * H; ++j) a[j] += static_cast<double>(h_prev[i]) * p.u[i * G + j];
  for (std::size_t j = 0; j < H; ++j) {
    z[j] = sigmoid(a[j]);
    r[j] = sigmoid(a[H + j]);
  }
  for (std::size_t i = 0; i < H; ++i) {
    const double rh = r[i] * h_prev[i];
    for (std::size_t j = 0; j < H; ++j) a[2 * H + j] += rh * p.u[i * G + 2 * H + j];
  }
  std::vector<float> h(H);
  for (std::size_t j = 0; j < H; ++j) {
    const double c = std::tanh(a[2 * H + j]);
    h[j] = static_cast<float>((1.0 - z[j]) * h_prev[j] + z[j] * c);
  }
  return h;
}

RecurrentLayer::RecurrentLayer(CellKind kind, std::size_t input_dim, std::size_t hidden, Rng& rng)
    : cell(kind),
      input(input_dim, (kind == CellKind::gru ? 3 : 4) * hidden, rng),
      recurrent(recurrent_init(hidden, kind == CellKind::gru ? 3 : 4, rng)) {}

Tensor RecurrentLayer::operator()(Tape& tape, const Tensor& x, std::span<const std::size_t> lengths,
                                  bool reverse) const {
  if (x.rank() != 3 || x.dim(2) != input.in_dim()) {
    throw ShapeError("recurrent layer: expected [B, L, " + std::to_string(input.in_dim()) + "], got " +
                     shape_str(x.shape()));
  }
  Tensor xproj = input(tape, x);
  return cell == CellKind::gru ? ops::gru_sequence(tape, xproj, recurrent, lengths, reverse)
                               : ops::lstm_sequence(tape, xproj, recurrent, lengths, reverse);
}

void RecurrentLayer::collect(const std::string& prefix, nn::NamedParams& out) const {
  input.collect(prefix + ".input", out);
  out.emplace_back(prefix + ".recurrent", recurrent);
}

GruParams RecurrentLayer::gru_params() const {
  if (cell != CellKind::gru) throw ConfigError("gru_params on a non-GRU layer");
  GruParams p;
  p.input_dim = input.in_dim();
  p.hidden = hidden();
  p.w.assign(input.weight.data().begin(), input.weight.data().end());
  p.u.assign(recurrent.data().begin(), recurrent.data().end());
  p.b.assign(input.bias.data().begin(), input.bias.data().end());
  return p;
}

std::vector<std::size_t> lengths_from_mask(std::span<const std::uint8_t> mask, std::size_t batch, std::size_t len) {
  if (mask.size() != batch * len) throw ShapeError("mask has " + std::to_string(mask.size()) + " entries for " +
                                                   std::to_string(batch) + "x" + std::to_string(len));
  std::vector<std::size_t> lengths(batch, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t n = 0;
    while (n < len && mask[b * len + n]) ++n;
    for (std::size_t t = n; t < len; ++t) {
      if (mask[b * len + t]) throw DataError("mask row " + std::to_string(b) + " is not right-padded");
    }
    lengths[b] = n;
  }
  return lengths;
}

Tensor bigru_forward(Tape& tape, const RecurrentLayer& forward, const RecurrentLayer& backward, const Tensor& x,
                     std::span<const std::uint8_t> mask) {
  if (forward.cell != CellKind::gru || backward.cell != CellKind::gru) throw ConfigError("bigru_forward needs GRU layers");
  if (x.rank() != 3) throw ShapeError("bigru_forward: expected [B, L, D], got " + shape_str(x.shape()));
  const auto lengths = lengths_from_mask(mask, x.dim(0), x.dim(1));
  return ops::concat_last(tape, forward(tape, x, lengths, false), backward(tape, x, lengths, true));
}

}  // namespace emd::head
