#include "hess/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace hess {

namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

std::uint64_t next_sequence() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

}  // namespace detail

static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be >= 1, got " + shape_str(shape));
    }
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, Scalar fill) : impl_(std::make_shared<detail::TensorImpl>()) {
    validate_shape(shape);
    impl_->data.assign(numel(shape), fill);
    impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<Scalar> data) : impl_(std::make_shared<detail::TensorImpl>()) {
    validate_shape(shape);
    if (numel(shape) != data.size()) {
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
}

Tensor Tensor::from(Shape shape, std::initializer_list<Scalar> values) {
    return Tensor(std::move(shape), std::vector<Scalar>(values));
}

Tensor Tensor::make_result(Shape shape, std::vector<Scalar> data, std::vector<Tensor> inputs,
                           BackwardFn backward) {
    Tensor out(std::move(shape), std::move(data));
    if (!g_grad_enabled) return out;
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.defined() && t.requires_grad(); });
    if (!any) return out;
    auto node = std::make_shared<detail::Node>();
    node->seq = detail::next_sequence();
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.impl_);
    node->backward = std::move(backward);
    node->output = out.impl_;
    out.impl_->requires_grad = true;
    out.impl_->grad_fn = std::move(node);
    return out;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= impl_->shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(impl_->shape));
    }
    return impl_->shape[axis];
}

Scalar Tensor::item() const {
    if (impl_->data.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(impl_->shape));
    return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    return *this;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
    Tensor out(impl_->shape, impl_->data);
    out.impl_->requires_grad = impl_->requires_grad && !impl_->grad_fn;
    return out;
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }

void Tensor::backward() const {
    if (impl_->data.size() != 1) {
        throw ShapeError("backward() requires a one-element loss, got " + shape_str(impl_->shape));
    }
    if (impl_->grad_fn && impl_->grad_fn->released) {
        throw std::logic_error("backward() called on a graph that was already released");
    }
    if (!impl_->requires_grad) {
        throw std::logic_error("backward() on a tensor that does not require grad");
    }

    // Collect every reachable node; replay in reverse execution order.
    std::vector<std::shared_ptr<detail::Node>> tape;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::shared_ptr<detail::Node>> stack;
    if (impl_->grad_fn) stack.push_back(impl_->grad_fn);
    while (!stack.empty()) {
        auto node = std::move(stack.back());
        stack.pop_back();
        if (!seen.insert(node.get()).second) continue;
        if (node->released) throw std::logic_error("backward() reached a released graph node");
        for (auto& in : node->inputs) {
            if (in->grad_fn) stack.push_back(in->grad_fn);
        }
        tape.push_back(std::move(node));
    }
    std::sort(tape.begin(), tape.end(), [](const auto& a, const auto& b) { return a->seq > b->seq; });

    if (impl_->grad.empty()) impl_->grad.assign(1, 0.0);
    impl_->grad[0] += 1.0;

    std::vector<std::vector<Scalar>*> buffers;
    for (auto& node : tape) {
        auto out = node->output.lock();
        if (out && !out->grad.empty()) {
            buffers.assign(node->inputs.size(), nullptr);
            for (std::size_t i = 0; i < node->inputs.size(); ++i) {
                auto& in = node->inputs[i];
                if (!in->requires_grad) continue;
                if (in->grad.empty()) in->grad.assign(in->data.size(), 0.0);
                buffers[i] = &in->grad;
            }
            node->backward(out->grad, buffers);
            // Intermediate gradients are not kept once propagated.
            if (out.get() != impl_.get()) std::vector<Scalar>().swap(out->grad);
        }
    }
    for (auto& node : tape) {
        node->released = true;
        node->backward = nullptr;
        node->inputs.clear();
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

}  // namespace hess
