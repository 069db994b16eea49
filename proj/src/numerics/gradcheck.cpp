#include "emd/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "emd/error.hpp"
#include "emd/numerics/rng.hpp"

namespace emd {

double grad_check(const std::function<Tensor(Tape&)>& f, Tensor x, GradCheckOptions opts) {
  if (opts.step < 1e-5 || opts.step > 1e-2) throw ConfigError("grad_check: step outside [1e-5, 1e-2]");
  x.set_requires_grad(true);
  x.zero_grad();
  Tape tape;
  Tensor loss = f(tape);
  if (loss.numel() != 1) throw ShapeError("grad_check: f must be scalar, got " + shape_str(loss.shape()));
  tape.backward(loss);
  const std::vector<float> analytic(x.grad().begin(), x.grad().end());
  tape.clear();

  std::vector<std::size_t> coords(x.numel());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (opts.max_coords != 0 && opts.max_coords < coords.size()) {
    Rng rng(opts.seed);
    rng.shuffle(coords.begin(), coords.end());
    coords.resize(opts.max_coords);
  }

  auto eval = [&f]() {
    Tape t = Tape::inference();
    return static_cast<double>(f(t).item());
  };
  double worst = 0.0;
  for (std::size_t i : coords) {
    const float orig = x.data()[i];
    const auto hi = static_cast<float>(orig + opts.step);
    const auto lo = static_cast<float>(orig - opts.step);
    x.data()[i] = hi;
    const double up = eval();
    x.data()[i] = lo;
    const double down = eval();
    x.data()[i] = orig;
    // divide by the perturbation actually representable in float
    const double numeric = (up - down) / (static_cast<double>(hi) - lo);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(static_cast<double>(analytic[i])));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace emd
