#include "emd/numerics/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "emd/error.hpp"

namespace emd {

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const std::size_t n = numel_of(shape);
  return from(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (numel_of(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " cannot hold " +
                     std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(impl->data.size(), 0.0f);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw Error("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return impl().data.size(); }

std::span<float> Tensor::data() const { return impl().data; }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

void Tensor::set_requires_grad(bool on) {
  impl().requires_grad = on;
  if (on && impl().grad.empty()) impl().grad.assign(impl().data.size(), 0.0f);
}

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<float> Tensor::grad() const {
  Impl& m = impl();
  if (m.grad.empty()) m.grad.assign(m.data.size(), 0.0f);
  return m.grad;
}

void Tensor::zero_grad() const {
  Impl& m = impl();
  if (!m.grad.empty()) std::fill(m.grad.begin(), m.grad.end(), 0.0f);
}

Tensor Tensor::clone() const {
  const Impl& m = impl();
  auto copy = std::make_shared<Impl>(m);
  return Tensor(std::move(copy));
}

}  // namespace emd
