#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "emd/numerics/rng.hpp"
#include "emd/numerics/tensor.hpp"

namespace testing {

inline emd::Tensor random_tensor(emd::Shape shape, emd::Rng& rng, double lo = -1.0, double hi = 1.0,
                                 bool requires_grad = false) {
  std::vector<float> v(emd::numel_of(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return emd::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace testing
