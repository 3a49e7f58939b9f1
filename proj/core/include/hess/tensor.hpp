#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hess {

using Scalar = double;
using Shape = std::vector<std::size_t>;

class Tensor;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown for shape mismatches and other contract violations in tensor ops.
class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node;

}  // namespace detail

/// Backward rule of one operation: receives the output gradient and one
/// accumulation buffer per input (nullptr where no gradient is needed).
/// Buffers are pre-sized to the input's element count.
using BackwardFn = std::function<void(const std::vector<Scalar>& grad_out,
                                      std::span<std::vector<Scalar>* const> grad_in)>;

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<Scalar> data;
    std::vector<Scalar> grad;
    bool requires_grad = false;
    std::shared_ptr<Node> grad_fn;
};

// One recorded operation, ordered by execution sequence number.
struct Node {
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn backward;
    std::weak_ptr<TensorImpl> output;
    bool released = false;
};

std::uint64_t next_sequence();

}  // namespace detail

/// Dense row-major tensor with optional reverse-mode gradient tracking.
///
/// Copies share storage; operations never mutate their inputs and always
/// return a fresh tensor. The only in-place mutation paths are
/// `mutable_data()` (used by optimizers and finite-difference checks) and
/// gradient accumulation during `backward`.
class Tensor {
  public:
    Tensor();
    explicit Tensor(Shape shape, Scalar fill = 0.0);
    Tensor(Shape shape, std::vector<Scalar> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor full(Shape shape, Scalar value) { return Tensor(std::move(shape), value); }
    static Tensor scalar(Scalar value) { return Tensor(Shape{1}, value); }
    static Tensor from(Shape shape, std::initializer_list<Scalar> values);

    /// Build the output of a differentiable operation. `backward` is recorded
    /// only if grad mode is on and at least one input requires a gradient.
    static Tensor make_result(Shape shape, std::vector<Scalar> data, std::vector<Tensor> inputs,
                              BackwardFn backward);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->data.size(); }

    std::span<const Scalar> data() const { return impl_->data; }
    std::span<Scalar> mutable_data() { return impl_->data; }
    Scalar item() const;
    Scalar operator[](std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool flag = true);

    /// Gradient buffer; empty until a backward pass reaches this tensor.
    std::span<const Scalar> grad() const { return impl_->grad; }
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad();

    /// Deep copy without graph history; keeps the requires_grad flag.
    Tensor clone() const;
    /// Deep copy without graph history or requires_grad.
    Tensor detach() const;

    /// Reverse-mode pass from a one-element tensor. Accumulates into every
    /// reachable tensor with requires_grad, then releases the recorded graph.
    void backward() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

  private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Global switch for graph recording; restored on scope exit.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

bool grad_enabled();

}  // namespace hess
