#include "emd/numerics/tape.hpp"

#include <unordered_set>

#include "emd/error.hpp"

namespace emd {

bool Tape::wants(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward) {
  output.set_requires_grad(true);
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  loss.grad()[0] += 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

bool Tape::topologically_ordered() const {
  std::unordered_set<const void*> produced;
  std::unordered_set<const void*> outputs;
  for (const Node& n : nodes_) outputs.insert(n.output.id());
  for (const Node& n : nodes_) {
    for (const Tensor& in : n.inputs) {
      if (outputs.count(in.id()) && !produced.count(in.id())) return false;
    }
    produced.insert(n.output.id());
  }
  return true;
}

}  // namespace emd
