#include "emd/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "emd/error.hpp"
#include "emd/numerics/kernels.hpp"

namespace emd::ops {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  require(x.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_str(x.shape()));
}

Tensor like(const Tensor& x) { return Tensor::zeros(x.shape()); }

// Elementwise unary op; `df(x, y)` gives dy/dx from input and output.
template <typename F, typename DF>
Tensor unary(Tape& tape, const Tensor& x, F f, DF df) {
  Tensor out = like(x);
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) od[i] = f(xd[i]);
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out, df]() mutable {
      if (!x.requires_grad()) return;
      auto g = out.grad();
      auto xg = x.grad();
      auto xv = x.data();
      auto ov = out.data();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * df(xv[i], ov[i]);
    });
  }
  return out;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(b, 2, "matmul");
  const std::size_t k = b.dim(0), n = b.dim(1);
  require(a.rank() >= 1 && a.shape().back() == k,
          "matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Tensor out = Tensor::zeros(out_shape);
  kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data().data(), false);
  if (tape.wants({&a, &b})) {
    tape.record({a, b}, out, [a, b, out, m, n, k]() mutable {
      const float* g = out.grad().data();
      if (a.requires_grad()) kernels::gemm_nt(m, k, n, g, b.data().data(), a.grad().data(), true);
      if (b.requires_grad()) kernels::gemm_tn(k, n, m, a.data().data(), g, b.grad().data(), true);
    });
  }
  return out;
}

Tensor bmm(Tape& tape, const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  require(b.dim(0) == batch && bk == k,
          "bmm: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out = Tensor::zeros({batch, m, n});
  const float* ad = a.data().data();
  const float* bd = b.data().data();
  float* od = out.data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    if (transpose_b) {
      kernels::gemm_nt(m, n, k, ad + i * m * k, bd + i * n * k, od + i * m * n, false);
    } else {
      kernels::gemm_nn(m, n, k, ad + i * m * k, bd + i * k * n, od + i * m * n, false);
    }
  }
  if (tape.wants({&a, &b})) {
    tape.record({a, b}, out, [a, b, out, batch, m, n, k, transpose_b]() mutable {
      const float* g = out.grad().data();
      const float* ad = a.data().data();
      const float* bd = b.data().data();
      for (std::size_t i = 0; i < batch; ++i) {
        const float* gi = g + i * m * n;
        if (a.requires_grad()) {
          float* ag = a.grad().data() + i * m * k;
          if (transpose_b) {
            kernels::gemm_nn(m, k, n, gi, bd + i * n * k, ag, true);
          } else {
            kernels::gemm_nt(m, k, n, gi, bd + i * k * n, ag, true);
          }
        }
        if (b.requires_grad()) {
          if (transpose_b) {
            // dB[N, K] = g^T[N, M] a[M, K]
            kernels::gemm_tn(n, k, m, gi, ad + i * m * k, b.grad().data() + i * n * k, true);
          } else {
            kernels::gemm_tn(k, n, m, ad + i * m * k, gi, b.grad().data() + i * k * n, true);
          }
        }
      }
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = like(a);
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  if (tape.wants({&a, &b})) {
    tape.record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ag = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ag[i] += g[i];
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) bg[i] += g[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = like(a);
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  if (tape.wants({&a, &b})) {
    tape.record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      auto ad = a.data();
      auto bd = b.data();
      if (a.requires_grad()) {
        auto ag = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ag[i] += g[i] * bd[i];
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) bg[i] += g[i] * ad[i];
      }
    });
  }
  return out;
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  require_rank(bias, 1, "add_bias");
  const std::size_t n = bias.dim(0);
  require(x.shape().back() == n,
          "add_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  Tensor out = like(x);
  auto xd = x.data();
  auto bd = bias.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] + bd[i % n];
  if (tape.wants({&x, &bias})) {
    tape.record({x, bias}, out, [x, bias, out, n]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto xg = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
      }
      if (bias.requires_grad()) {
        std::vector<double> acc(n, 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i % n] += g[i];
        auto bg = bias.grad();
        for (std::size_t j = 0; j < n; ++j) bg[j] += static_cast<float>(acc[j]);
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, float factor) {
  return unary(
      tape, x, [factor](float v) { return v * factor; },
      [factor](float, float) { return factor; });
}

Tensor relu(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor gelu(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](float v) { return static_cast<float>(v * normal_cdf(v)); },
      [](float v, float) { return static_cast<float>(normal_cdf(v) + v * normal_pdf(v)); });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary(
      tape, x,
      [](float v) {
        const double d = v;
        return static_cast<float>(d >= 0 ? 1.0 / (1.0 + std::exp(-d))
                                         : std::exp(d) / (1.0 + std::exp(d)));
      },
      [](float, float y) { return y * (1.0f - y); });
}

Tensor tanh(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  require(axis < x.rank(), "softmax: axis out of range for " + shape_str(x.shape()));
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Tensor out = like(x);
  if (inner == 1) {
    kernels::softmax_rows(outer, n, x.data().data(), nullptr, out.data().data());
  } else {
    std::vector<float> row(n), res(n);
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        for (std::size_t j = 0; j < n; ++j) row[j] = xd[(o * n + j) * inner + in];
        kernels::serial::softmax_rows(1, n, row.data(), nullptr, res.data());
        for (std::size_t j = 0; j < n; ++j) od[(o * n + j) * inner + in] = res[j];
      }
    }
  }
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out, outer, n, inner]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto xg = x.grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = (o * n + j) * inner + in;
            dot += static_cast<double>(g[idx]) * y[idx];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = (o * n + j) * inner + in;
            xg[idx] += static_cast<float>(y[idx] * (g[idx] - dot));
          }
        }
      }
    });
  }
  return out;
}

Tensor masked_softmax(Tape& tape, const Tensor& x, std::span<const std::uint8_t> allow) {
  require(allow.size() == x.numel(), "masked_softmax: mask size does not match " + shape_str(x.shape()));
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Tensor out = like(x);
  kernels::softmax_rows(rows, n, x.data().data(), allow.data(), out.data().data());
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out, rows, n]() mutable {
      const float* g = out.grad().data();
      const float* y = out.data().data();
      float* xg = x.grad().data();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[r * n + j]) * y[r * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          xg[r * n + j] += static_cast<float>(y[r * n + j] * (g[r * n + j] - dot));
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const std::size_t n = x.shape().back();
  require(gamma.numel() == n && beta.numel() == n,
          "layer_norm: gamma/beta must have " + std::to_string(n) + " entries");
  const std::size_t rows = x.numel() / n;
  Tensor out = like(x);
  auto xhat = std::make_shared<std::vector<float>>(x.numel());
  auto inv_std = std::make_shared<std::vector<float>>(rows);
  kernels::layer_norm_rows(rows, n, x.data().data(), gamma.data().data(), beta.data().data(), eps,
                           out.data().data(), xhat->data(), inv_std->data());
  if (tape.wants({&x, &gamma, &beta})) {
    tape.record({x, gamma, beta}, out, [x, gamma, beta, out, xhat, inv_std, rows, n]() mutable {
      const float* g = out.grad().data();
      const float* gm = gamma.data().data();
      const float* xh = xhat->data();
      if (gamma.requires_grad() || beta.requires_grad()) {
        std::vector<double> dg(n, 0.0), db(n, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) {
            dg[j] += static_cast<double>(g[r * n + j]) * xh[r * n + j];
            db[j] += g[r * n + j];
          }
        }
        if (gamma.requires_grad()) {
          auto gg = gamma.grad();
          for (std::size_t j = 0; j < n; ++j) gg[j] += static_cast<float>(dg[j]);
        }
        if (beta.requires_grad()) {
          auto bg = beta.grad();
          for (std::size_t j = 0; j < n; ++j) bg[j] += static_cast<float>(db[j]);
        }
      }
      if (x.requires_grad()) {
        float* xg = x.grad().data();
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = static_cast<double>(g[r * n + j]) * gm[j];
            mean_d += d;
            mean_dx += d * xh[r * n + j];
          }
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          const double is = (*inv_std)[r];
          for (std::size_t j = 0; j < n; ++j) {
            const double d = static_cast<double>(g[r * n + j]) * gm[j];
            xg[r * n + j] += static_cast<float>(is * (d - mean_d - xh[r * n + j] * mean_dx));
          }
        }
      }
    });
  }
  return out;
}

Tensor embedding(Tape& tape, const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  require(!ids.empty(), "embedding: empty id list");
  Tensor out = Tensor::zeros({ids.size(), d});
  auto td = table.data();
  auto od = out.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw DataError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                      std::to_string(vocab) + " rows");
    }
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                od.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  if (tape.wants({&table})) {
    std::vector<std::int32_t> idv(ids.begin(), ids.end());
    tape.record({table}, out, [table, out, idv = std::move(idv), d]() mutable {
      auto g = out.grad();
      auto tg = table.grad();
      for (std::size_t i = 0; i < idv.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) tg[idv[i] * d + j] += g[i * d + j];
      }
    });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  require(numel_of(shape) == x.numel(),
          "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  auto xd = x.data();
  Tensor out = Tensor::from(std::move(shape), std::vector<float>(xd.begin(), xd.end()));
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto xg = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
    });
  }
  return out;
}

Tensor permute_0213(Tape& tape, const Tensor& x) {
  require_rank(x, 4, "permute_0213");
  const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2), d = x.dim(3);
  Tensor out = Tensor::zeros({a, c, b, d});
  auto xd = x.data();
  auto od = out.data();
  auto src_index = [=](std::size_t i, std::size_t j, std::size_t k) {
    return ((i * b + j) * c + k) * d;
  };
  auto dst_index = [=](std::size_t i, std::size_t j, std::size_t k) {
    return ((i * c + k) * b + j) * d;
  };
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t k = 0; k < c; ++k)
        std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(src_index(i, j, k)), d,
                    od.begin() + static_cast<std::ptrdiff_t>(dst_index(i, j, k)));
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out, a, b, c, d, src_index, dst_index]() mutable {
      auto g = out.grad();
      auto xg = x.grad();
      for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < b; ++j)
          for (std::size_t k = 0; k < c; ++k) {
            const std::size_t s = src_index(i, j, k), t = dst_index(i, j, k);
            for (std::size_t e = 0; e < d; ++e) xg[s + e] += g[t + e];
          }
    });
  }
  return out;
}

Tensor dropout(Tape& tape, const Tensor& x, float rate) {
  if (!tape.is_training() || rate <= 0.0f) return x;
  require(rate < 1.0f, "dropout: rate must be below 1");
  const float keep_scale = 1.0f / (1.0f - rate);
  std::vector<float> factor(x.numel());
  for (float& f : factor) f = tape.rng().uniform() >= rate ? keep_scale : 0.0f;
  Tensor out = like(x);
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] * factor[i];
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out, factor = std::move(factor)]() mutable {
      auto g = out.grad();
      auto xg = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * factor[i];
    });
  }
  return out;
}

Tensor concat_last(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.rank() == b.rank() && a.rank() >= 1, "concat_last: rank mismatch");
  for (std::size_t i = 0; i + 1 < a.rank(); ++i) {
    require(a.dim(i) == b.dim(i),
            "concat_last: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t na = a.shape().back(), nb = b.shape().back();
  const std::size_t rows = a.numel() / na;
  Shape s = a.shape();
  s.back() = na + nb;
  Tensor out = Tensor::zeros(s);
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(ad.begin() + static_cast<std::ptrdiff_t>(r * na), na,
                od.begin() + static_cast<std::ptrdiff_t>(r * (na + nb)));
    std::copy_n(bd.begin() + static_cast<std::ptrdiff_t>(r * nb), nb,
                od.begin() + static_cast<std::ptrdiff_t>(r * (na + nb) + na));
  }
  if (tape.wants({&a, &b})) {
    tape.record({a, b}, out, [a, b, out, rows, na, nb]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ag = a.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < na; ++j) ag[r * na + j] += g[r * (na + nb) + j];
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < nb; ++j) bg[r * nb + j] += g[r * (na + nb) + na + j];
      }
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out]() mutable {
      const float g = out.grad()[0];
      for (float& v : x.grad()) v += g;
    });
  }
  return out;
}

Tensor mean(Tape& tape, const Tensor& x) {
  const auto n = static_cast<double>(x.numel());
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out, n]() mutable {
      const auto g = static_cast<float>(out.grad()[0] / n);
      for (float& v : x.grad()) v += g;
    });
  }
  return out;
}

Tensor mask_positions(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask) {
  require_rank(x, 3, "mask_positions");
  const std::size_t positions = x.dim(0) * x.dim(1), c = x.dim(2);
  require(mask.size() == positions, "mask_positions: mask has " + std::to_string(mask.size()) +
                                        " entries for " + shape_str(x.shape()));
  Tensor out = like(x);
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t p = 0; p < positions; ++p) {
    if (mask[p]) std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(p * c), c,
                             od.begin() + static_cast<std::ptrdiff_t>(p * c));
  }
  if (tape.wants({&x})) {
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    tape.record({x}, out, [x, out, m = std::move(m), c]() mutable {
      auto g = out.grad();
      auto xg = x.grad();
      for (std::size_t p = 0; p < m.size(); ++p) {
        if (!m[p]) continue;
        for (std::size_t j = 0; j < c; ++j) xg[p * c + j] += g[p * c + j];
      }
    });
  }
  return out;
}

Tensor select_positions(Tape& tape, const Tensor& x, std::span<const std::size_t> positions) {
  require_rank(x, 3, "select_positions");
  const std::size_t batch = x.dim(0), len = x.dim(1), c = x.dim(2);
  require(positions.size() == batch, "select_positions: need one position per row");
  Tensor out = Tensor::zeros({batch, c});
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    require(positions[b] < len, "select_positions: position out of range");
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>((b * len + positions[b]) * c), c,
                od.begin() + static_cast<std::ptrdiff_t>(b * c));
  }
  if (tape.wants({&x})) {
    std::vector<std::size_t> pos(positions.begin(), positions.end());
    tape.record({x}, out, [x, out, pos = std::move(pos), len, c]() mutable {
      auto g = out.grad();
      auto xg = x.grad();
      for (std::size_t b = 0; b < pos.size(); ++b)
        for (std::size_t j = 0; j < c; ++j) xg[(b * len + pos[b]) * c + j] += g[b * c + j];
    });
  }
  return out;
}

Tensor sum_positions(Tape& tape, const Tensor& x) {
  require_rank(x, 3, "sum_positions");
  const std::size_t batch = x.dim(0), len = x.dim(1), c = x.dim(2);
  Tensor out = Tensor::zeros({batch, c});
  auto xd = x.data();
  auto od = out.data();
  std::vector<double> acc(c);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t j = 0; j < c; ++j) acc[j] += xd[(b * len + t) * c + j];
    for (std::size_t j = 0; j < c; ++j) od[b * c + j] = static_cast<float>(acc[j]);
  }
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out, batch, len, c]() mutable {
      auto g = out.grad();
      auto xg = x.grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t j = 0; j < c; ++j) xg[(b * len + t) * c + j] += g[b * c + j];
    });
  }
  return out;
}

Tensor max_positions(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask) {
  require_rank(x, 3, "max_positions");
  const std::size_t batch = x.dim(0), len = x.dim(1), c = x.dim(2);
  require(mask.size() == batch * len, "max_positions: mask size mismatch");
  Tensor out = Tensor::zeros({batch, c});
  std::vector<std::size_t> argmax(batch * c, 0);
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    bool any = false;
    for (std::size_t t = 0; t < len; ++t) {
      if (!mask[b * len + t]) continue;
      for (std::size_t j = 0; j < c; ++j) {
        const float v = xd[(b * len + t) * c + j];
        if (!any || v > od[b * c + j]) {
          od[b * c + j] = v;
          argmax[b * c + j] = t;
        }
      }
      any = true;
    }
    if (!any) throw DataError("max_positions: row " + std::to_string(b) + " has no real positions");
  }
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out, argmax = std::move(argmax), len, c]() mutable {
      auto g = out.grad();
      auto xg = x.grad();
      for (std::size_t i = 0; i < argmax.size(); ++i) {
        const std::size_t b = i / c, j = i % c;
        xg[(b * len + argmax[i]) * c + j] += g[i];
      }
    });
  }
  return out;
}

Tensor unfold_positions(Tape& tape, const Tensor& x, std::size_t width) {
  require_rank(x, 3, "unfold_positions");
  require(width % 2 == 1, "unfold_positions: width must be odd");
  const std::size_t batch = x.dim(0), len = x.dim(1), c = x.dim(2);
  const auto half = static_cast<std::ptrdiff_t>(width / 2);
  Tensor out = Tensor::zeros({batch, len, width * c});
  auto xd = x.data();
  auto od = out.data();
  // (destination offset, source offset) pairs for every copied block.
  std::vector<std::pair<std::size_t, std::size_t>> blocks;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t w = 0; w < width; ++w) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(w) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
        blocks.emplace_back(((b * len + t) * width + w) * c,
                            (b * len + static_cast<std::size_t>(src)) * c);
      }
  for (auto [dst, src] : blocks) {
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(src), c,
                od.begin() + static_cast<std::ptrdiff_t>(dst));
  }
  if (tape.wants({&x})) {
    tape.record({x}, out, [x, out, blocks = std::move(blocks), c]() mutable {
      auto g = out.grad();
      auto xg = x.grad();
      for (auto [dst, src] : blocks)
        for (std::size_t j = 0; j < c; ++j) xg[src + j] += g[dst + j];
    });
  }
  return out;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::int32_t> targets,
                     std::span<const float> weights) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), v = logits.dim(1);
  require(targets.size() == rows && weights.size() == rows,
          "cross_entropy: need one target and weight per row");
  double wsum = 0.0;
  for (float w : weights) wsum += w;
  if (wsum <= 0.0) throw DataError("cross_entropy: no weighted rows");
  auto probs = std::make_shared<std::vector<float>>(rows * v);
  kernels::softmax_rows(rows, v, logits.data().data(), nullptr, probs->data());
  double loss = 0.0;
  const float* ld = logits.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (weights[r] == 0.0f) continue;
    const auto t = static_cast<std::size_t>(targets[r]);
    require(t < v, "cross_entropy: target out of range");
    // log-softmax in double for the selected entry
    double mx = ld[r * v];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(ld[r * v + j]));
    double se = 0.0;
    for (std::size_t j = 0; j < v; ++j) se += std::exp(ld[r * v + j] - mx);
    loss += weights[r] * (std::log(se) + mx - ld[r * v + t]);
  }
  Tensor out = Tensor::scalar(static_cast<float>(loss / wsum));
  if (tape.wants({&logits})) {
    std::vector<std::int32_t> tv(targets.begin(), targets.end());
    std::vector<float> wv(weights.begin(), weights.end());
    tape.record({logits}, out,
                [logits, out, probs, tv = std::move(tv), wv = std::move(wv), wsum, v]() mutable {
                  const double g = out.grad()[0] / wsum;
                  float* lg = logits.grad().data();
                  for (std::size_t r = 0; r < tv.size(); ++r) {
                    if (wv[r] == 0.0f) continue;
                    const double scale = g * wv[r];
                    for (std::size_t j = 0; j < v; ++j) {
                      const double y = (static_cast<std::int32_t>(j) == tv[r]) ? 1.0 : 0.0;
                      lg[r * v + j] += static_cast<float>(scale * ((*probs)[r * v + j] - y));
                    }
                  }
                });
  }
  return out;
}

Tensor bce(Tape& tape, const Tensor& probs, std::span<const float> labels) {
  require(probs.numel() == labels.size(), "bce: need one label per probability");
  require(!labels.empty(), "bce: empty batch");
  const auto n = static_cast<double>(labels.size());
  auto pd = probs.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(static_cast<double>(pd[i]), double{kProbClamp}, 1.0 - kProbClamp);
    const double y = labels[i];
    loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  Tensor out = Tensor::scalar(static_cast<float>(loss / n));
  if (tape.wants({&probs})) {
    std::vector<float> y(labels.begin(), labels.end());
    tape.record({probs}, out, [probs, out, y = std::move(y), n]() mutable {
      const double g = out.grad()[0] / n;
      auto pd = probs.data();
      auto pg = probs.grad();
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double p = pd[i];
        if (p < kProbClamp || p > 1.0 - kProbClamp) continue;  // clamp is flat
        pg[i] += static_cast<float>(g * (-y[i] / p + (1.0 - y[i]) / (1.0 - p)));
      }
    });
  }
  return out;
}

}  // namespace emd::ops
