#pragma once

#include <cstdint>
#include <functional>

#include "emd/numerics/tape.hpp"
#include "emd/numerics/tensor.hpp"

namespace emd {

struct GradCheckOptions {
  double step = 1e-3;
  /// Number of coordinates probed; 0 probes all of them.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

/// Compares the tape gradient of scalar `f` w.r.t. `x` against central
/// differences. Returns max |analytic - numeric| / max(1, |analytic|).
///
/// `f` is evaluated on tapes with training off, so dropout never fires.
double grad_check(const std::function<Tensor(Tape&)>& f, Tensor x, GradCheckOptions opts = {});

}  // namespace emd
