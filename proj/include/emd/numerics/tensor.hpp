#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace emd {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float tensor with an optional gradient buffer.
///
/// `Tensor` is a shared handle: copies alias the same storage, which is how
/// the tape refers back to the tensors it recorded. Use `clone()` for a deep
/// copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  [[nodiscard]] bool defined() const { return impl_ != nullptr; }
  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] std::size_t dim(std::size_t axis) const;
  [[nodiscard]] std::size_t rank() const { return shape().size(); }
  [[nodiscard]] std::size_t numel() const;

  // Handle semantics: a const Tensor still exposes mutable storage, like a
  // const shared_ptr.
  [[nodiscard]] std::span<float> data() const;
  [[nodiscard]] float item() const;

  [[nodiscard]] bool requires_grad() const;
  void set_requires_grad(bool on);

  [[nodiscard]] bool has_grad() const;
  /// Gradient buffer; allocated as zeros on first access.
  [[nodiscard]] std::span<float> grad() const;
  void zero_grad() const;

  [[nodiscard]] Tensor clone() const;
  [[nodiscard]] const void* id() const { return impl_.get(); }

 private:
  struct Impl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;
    bool requires_grad = false;
  };
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  Impl& impl() const;

  std::shared_ptr<Impl> impl_;
};

}  // namespace emd
