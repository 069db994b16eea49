#include <cmath>
#include <memory>
#include <vector>

#include "emd/error.hpp"
#include "emd/numerics/ops.hpp"

namespace emd::ops {
namespace {

double sigm(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

struct SeqDims {
  std::size_t batch, len, hidden, gates;
};

SeqDims check_recurrent(const Tensor& xproj, const Tensor& recurrent,
                        std::span<const std::size_t> lengths, std::size_t n_gates, const char* op) {
  if (xproj.rank() != 3 || recurrent.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected xproj [B,L,G*H] and recurrent [H,G*H], got " +
                     shape_str(xproj.shape()) + " and " + shape_str(recurrent.shape()));
  }
  const std::size_t hidden = recurrent.dim(0);
  if (recurrent.dim(1) != n_gates * hidden || xproj.dim(2) != n_gates * hidden) {
    throw ShapeError(std::string(op) + ": gate width mismatch " + shape_str(xproj.shape()) + " vs " +
                     shape_str(recurrent.shape()));
  }
  if (lengths.size() != xproj.dim(0)) throw ShapeError(std::string(op) + ": one length per row required");
  for (std::size_t n : lengths) {
    if (n > xproj.dim(1)) throw ShapeError(std::string(op) + ": length exceeds sequence width");
  }
  return {xproj.dim(0), xproj.dim(1), hidden, n_gates};
}

// Position visited at step s of a row with `n` real tokens.
inline std::size_t position(std::size_t s, std::size_t n, bool reverse) { return reverse ? n - 1 - s : s; }

}  // namespace

Tensor gru_sequence(Tape& tape, const Tensor& xproj, const Tensor& recurrent,
                    std::span<const std::size_t> lengths, bool reverse) {
  const SeqDims d = check_recurrent(xproj, recurrent, lengths, 3, "gru_sequence");
  const std::size_t H = d.hidden, G = 3 * H;
  Tensor out = Tensor::zeros({d.batch, d.len, H});
  // Saved activations per position: z, r, c.
  auto saved = std::make_shared<std::vector<float>>(d.batch * d.len * G, 0.0f);
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  const float* xp = xproj.data().data();
  const float* U = recurrent.data().data();
  float* hout = out.data().data();

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(d.batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    std::vector<double> hprev(H, 0.0), a(G), rh(H);
    for (std::size_t s = 0; s < lens[b]; ++s) {
      const std::size_t t = position(s, lens[b], reverse);
      const float* x = xp + (b * d.len + t) * G;
      float* sv = saved->data() + (b * d.len + t) * G;
      std::fill(a.begin(), a.end(), 0.0);
      for (std::size_t i = 0; i < H; ++i) {
        const double hv = hprev[i];
        for (std::size_t j = 0; j < 2 * H; ++j) a[j] += hv * U[i * G + j];
      }
      for (std::size_t j = 0; j < H; ++j) {
        const double z = sigm(x[j] + a[j]);
        const double r = sigm(x[H + j] + a[H + j]);
        sv[j] = static_cast<float>(z);
        sv[H + j] = static_cast<float>(r);
        rh[j] = r * hprev[j];
      }
      for (std::size_t i = 0; i < H; ++i) {
        const double v = rh[i];
        for (std::size_t j = 0; j < H; ++j) a[2 * H + j] += v * U[i * G + 2 * H + j];
      }
      float* h = hout + (b * d.len + t) * H;
      for (std::size_t j = 0; j < H; ++j) {
        const double c = std::tanh(x[2 * H + j] + a[2 * H + j]);
        sv[2 * H + j] = static_cast<float>(c);
        const double z = sv[j];
        const double hn = (1.0 - z) * hprev[j] + z * c;
        h[j] = static_cast<float>(hn);
        hprev[j] = h[j];
      }
    }
  }

  if (tape.wants({&xproj, &recurrent})) {
    tape.record({xproj, recurrent}, out, [xproj, recurrent, out, saved, lens, d, reverse]() mutable {
      const std::size_t H = d.hidden, G = 3 * H;
      const float* g = out.grad().data();
      const float* hs = out.data().data();
      const float* U = recurrent.data().data();
      const bool want_x = xproj.requires_grad();
      const bool want_u = recurrent.requires_grad();
      float* xg = want_x ? xproj.grad().data() : nullptr;
      std::vector<double> du(want_u ? d.batch * H * G : 0, 0.0);

#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(d.batch); ++bi) {
        const auto b = static_cast<std::size_t>(bi);
        double* dub = want_u ? du.data() + b * H * G : nullptr;
        std::vector<double> carry(H, 0.0), dh(H), hprev(H), dpre(G), dhp(H), drh(H);
        for (std::size_t s = lens[b]; s-- > 0;) {
          const std::size_t t = position(s, lens[b], reverse);
          const float* sv = saved->data() + (b * d.len + t) * G;
          if (s == 0) {
            std::fill(hprev.begin(), hprev.end(), 0.0);
          } else {
            const float* hp = hs + (b * d.len + position(s - 1, lens[b], reverse)) * H;
            for (std::size_t j = 0; j < H; ++j) hprev[j] = hp[j];
          }
          for (std::size_t j = 0; j < H; ++j) dh[j] = g[(b * d.len + t) * H + j] + carry[j];
          for (std::size_t j = 0; j < H; ++j) {
            const double z = sv[j], c = sv[2 * H + j];
            const double dz = dh[j] * (c - hprev[j]);
            const double dc = dh[j] * z;
            dhp[j] = dh[j] * (1.0 - z);
            dpre[2 * H + j] = dc * (1.0 - c * c);
            dpre[j] = dz * z * (1.0 - z);
          }
          // candidate path through (r * hprev) U_c
          for (std::size_t i = 0; i < H; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < H; ++j) acc += dpre[2 * H + j] * U[i * G + 2 * H + j];
            drh[i] = acc;
          }
          for (std::size_t i = 0; i < H; ++i) {
            const double r = sv[H + i];
            const double dr = drh[i] * hprev[i];
            dhp[i] += drh[i] * r;
            dpre[H + i] = dr * r * (1.0 - r);
          }
          for (std::size_t i = 0; i < H; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < 2 * H; ++j) acc += dpre[j] * U[i * G + j];
            dhp[i] += acc;
          }
          if (want_x) {
            float* xgr = xg + (b * d.len + t) * G;
            for (std::size_t j = 0; j < G; ++j) xgr[j] += static_cast<float>(dpre[j]);
          }
          if (want_u) {
            for (std::size_t i = 0; i < H; ++i) {
              const double hv = hprev[i];
              const double rhv = sv[H + i] * hprev[i];
              for (std::size_t j = 0; j < 2 * H; ++j) dub[i * G + j] += hv * dpre[j];
              for (std::size_t j = 0; j < H; ++j) dub[i * G + 2 * H + j] += rhv * dpre[2 * H + j];
            }
          }
          carry = dhp;
        }
      }
      if (want_u) {
        float* ug = recurrent.grad().data();
        for (std::size_t k = 0; k < H * G; ++k) {
          double acc = 0.0;
          for (std::size_t b = 0; b < d.batch; ++b) acc += du[b * H * G + k];
          ug[k] += static_cast<float>(acc);
        }
      }
    });
  }
  return out;
}

Tensor lstm_sequence(Tape& tape, const Tensor& xproj, const Tensor& recurrent,
                     std::span<const std::size_t> lengths, bool reverse) {
  const SeqDims d = check_recurrent(xproj, recurrent, lengths, 4, "lstm_sequence");
  const std::size_t H = d.hidden, G = 4 * H;
  Tensor out = Tensor::zeros({d.batch, d.len, H});
  // Saved per position: i, f, g, o gate activations then the cell state c.
  const std::size_t stride = G + H;
  auto saved = std::make_shared<std::vector<float>>(d.batch * d.len * stride, 0.0f);
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  const float* xp = xproj.data().data();
  const float* U = recurrent.data().data();
  float* hout = out.data().data();

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(d.batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    std::vector<double> hprev(H, 0.0), cprev(H, 0.0), a(G);
    for (std::size_t s = 0; s < lens[b]; ++s) {
      const std::size_t t = position(s, lens[b], reverse);
      const float* x = xp + (b * d.len + t) * G;
      float* sv = saved->data() + (b * d.len + t) * stride;
      for (std::size_t j = 0; j < G; ++j) a[j] = x[j];
      for (std::size_t i = 0; i < H; ++i) {
        const double hv = hprev[i];
        for (std::size_t j = 0; j < G; ++j) a[j] += hv * U[i * G + j];
      }
      float* h = hout + (b * d.len + t) * H;
      for (std::size_t j = 0; j < H; ++j) {
        const double ig = sigm(a[j]);
        const double fg = sigm(a[H + j]);
        const double gg = std::tanh(a[2 * H + j]);
        const double og = sigm(a[3 * H + j]);
        const double c = fg * cprev[j] + ig * gg;
        sv[j] = static_cast<float>(ig);
        sv[H + j] = static_cast<float>(fg);
        sv[2 * H + j] = static_cast<float>(gg);
        sv[3 * H + j] = static_cast<float>(og);
        sv[G + j] = static_cast<float>(c);
        cprev[j] = sv[G + j];
        h[j] = static_cast<float>(og * std::tanh(cprev[j]));
        hprev[j] = h[j];
      }
    }
  }

  if (tape.wants({&xproj, &recurrent})) {
    tape.record({xproj, recurrent}, out, [xproj, recurrent, out, saved, lens, d, reverse]() mutable {
      const std::size_t H = d.hidden, G = 4 * H, stride = G + H;
      const float* g = out.grad().data();
      const float* hs = out.data().data();
      const float* U = recurrent.data().data();
      const bool want_x = xproj.requires_grad();
      const bool want_u = recurrent.requires_grad();
      float* xg = want_x ? xproj.grad().data() : nullptr;
      std::vector<double> du(want_u ? d.batch * H * G : 0, 0.0);

#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(d.batch); ++bi) {
        const auto b = static_cast<std::size_t>(bi);
        double* dub = want_u ? du.data() + b * H * G : nullptr;
        std::vector<double> dh_carry(H, 0.0), dc_carry(H, 0.0), hprev(H), cprev(H), dpre(G), dhp(H);
        for (std::size_t s = lens[b]; s-- > 0;) {
          const std::size_t t = position(s, lens[b], reverse);
          const float* sv = saved->data() + (b * d.len + t) * stride;
          if (s == 0) {
            std::fill(hprev.begin(), hprev.end(), 0.0);
            std::fill(cprev.begin(), cprev.end(), 0.0);
          } else {
            const std::size_t tp = position(s - 1, lens[b], reverse);
            const float* hp = hs + (b * d.len + tp) * H;
            const float* sp = saved->data() + (b * d.len + tp) * stride;
            for (std::size_t j = 0; j < H; ++j) {
              hprev[j] = hp[j];
              cprev[j] = sp[G + j];
            }
          }
          for (std::size_t j = 0; j < H; ++j) {
            const double ig = sv[j], fg = sv[H + j], gg = sv[2 * H + j], og = sv[3 * H + j];
            const double tc = std::tanh(static_cast<double>(sv[G + j]));
            const double dh = g[(b * d.len + t) * H + j] + dh_carry[j];
            const double dc = dc_carry[j] + dh * og * (1.0 - tc * tc);
            dpre[j] = dc * gg * ig * (1.0 - ig);
            dpre[H + j] = dc * cprev[j] * fg * (1.0 - fg);
            dpre[2 * H + j] = dc * ig * (1.0 - gg * gg);
            dpre[3 * H + j] = dh * tc * og * (1.0 - og);
            dc_carry[j] = dc * fg;
          }
          for (std::size_t i = 0; i < H; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < G; ++j) acc += dpre[j] * U[i * G + j];
            dhp[i] = acc;
          }
          if (want_x) {
            float* xgr = xg + (b * d.len + t) * G;
            for (std::size_t j = 0; j < G; ++j) xgr[j] += static_cast<float>(dpre[j]);
          }
          if (want_u) {
            for (std::size_t i = 0; i < H; ++i) {
              const double hv = hprev[i];
              for (std::size_t j = 0; j < G; ++j) dub[i * G + j] += hv * dpre[j];
            }
          }
          dh_carry = dhp;
        }
      }
      if (want_u) {
        float* ug = recurrent.grad().data();
        for (std::size_t k = 0; k < H * G; ++k) {
          double acc = 0.0;
          for (std::size_t b = 0; b < d.batch; ++b) acc += du[b * H * G + k];
          ug[k] += static_cast<float>(acc);
        }
      }
    });
  }
  return out;
}

}  // namespace emd::ops
