#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "emd/numerics/rng.hpp"
#include "emd/numerics/tensor.hpp"

namespace emd {

/// Records differentiable operations in execution order and replays them in
/// reverse to populate gradients.
///
/// A tape also carries the forward-pass mode: whether stochastic layers such
/// as dropout are active, and the generator they draw from. Inference uses a
/// non-recording tape with training off.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  static Tape inference() { return Tape(false); }
  static Tape training(std::uint64_t seed) {
    Tape t(true);
    t.set_training(true, seed);
    return t;
  }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  [[nodiscard]] bool recording() const { return recording_; }
  [[nodiscard]] bool is_training() const { return training_; }
  void set_training(bool on, std::uint64_t seed) {
    training_ = on;
    rng_ = Rng(seed);
  }
  Rng& rng() { return rng_; }

  /// True when an op over `inputs` must be recorded.
  [[nodiscard]] bool wants(std::initializer_list<const Tensor*> inputs) const;

  /// Appends a node. `backward` reads output.grad() and accumulates into the
  /// inputs' grads.
  void record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward);

  /// Seeds d loss / d loss = 1 and runs every node's backward rule once, in
  /// reverse order. Throws if `loss` is not a single-element tensor.
  void backward(Tensor& loss);

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// True if every node's inputs were produced earlier on the tape or are leaves.
  [[nodiscard]] bool topologically_ordered() const;

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  bool recording_ = true;
  bool training_ = false;
  Rng rng_{0};
};

}  // namespace emd
