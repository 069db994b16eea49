#include "emd/numerics/adam.hpp"

#include <cmath>

#include "emd/error.hpp"

namespace emd {

void adam_step(std::span<Tensor> params, AdamState& state) {
  if (state.lr <= 0.0) throw ConfigError("adam: learning rate must be positive");
  if (state.m.empty() && state.step == 0) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.numel(), 0.0f);
      state.v.emplace_back(p.numel(), 0.0f);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam: state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel()) {
      throw ShapeError("adam: moment buffer size mismatch for parameter " + std::to_string(i) +
                       " of shape " + shape_str(params[i].shape()));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) continue;
    auto w = p.data();
    auto g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = state.lr * (mj / c1) / (std::sqrt(vj / c2) + state.eps);
      w[j] = static_cast<float>(w[j] - update);
    }
  }
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (float g : p.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const auto f = static_cast<float>(max_norm / norm);
    for (Tensor& p : params) {
      if (!p.has_grad()) continue;
      for (float& g : p.grad()) g *= f;
    }
  }
  return norm;
}

void zero_grads(std::span<Tensor> params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace emd
