#include "ssmqa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "ssmqa/errors.hpp"
#include "ssmqa/rng.hpp"

namespace ssmqa {

namespace {

thread_local bool g_grad_enabled = true;

void validate_shape(const Shape& shape) {
    for (auto d : shape) {
        if (d < 0) {
            throw ShapeError("negative dimension in shape " + shape_str(shape));
        }
    }
}

ImplPtr new_impl(const Shape& shape, std::vector<double> data) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data = std::move(data);
    return impl;
}

} // namespace

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& TensorImpl::grad_buffer() {
    if (grad.size() != data.size()) {
        grad.assign(data.size(), 0.0);
    }
    return grad;
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::ones(const Shape& shape) { return full(shape, 1.0); }

Tensor Tensor::full(const Shape& shape, double value) {
    validate_shape(shape);
    return Tensor(new_impl(shape, std::vector<double>(static_cast<std::size_t>(shape_numel(shape)), value)));
}

Tensor Tensor::uniform(const Shape& shape, std::uint64_t seed, double lo, double hi) {
    validate_shape(shape);
    Rng rng(seed);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) {
        x = rng.uniform(lo, hi);
    }
    return Tensor(new_impl(shape, std::move(v)));
}

Tensor Tensor::normal(const Shape& shape, std::uint64_t seed, double stddev) {
    validate_shape(shape);
    Rng rng(seed);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) {
        x = stddev * rng.normal();
    }
    return Tensor(new_impl(shape, std::move(v)));
}

Tensor Tensor::from_values(const Shape& shape, std::vector<double> values) {
    validate_shape(shape);
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
        throw ShapeError("from_values: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    }
    return Tensor(new_impl(shape, std::move(values)));
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(int axis) const {
    const int r = rank();
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
    }
    return shape()[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad_buffer(); }

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return Tensor(new_impl(impl_->shape, impl_->data)); }

const char* Tensor::op_name() const { return impl_->op; }

void Tensor::backward() const {
    if (numel() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(shape()));
    }
    if (!impl_->requires_grad) {
        throw std::logic_error("backward() on a tensor that does not require grad");
    }
    const Tape tape = Tape::build(*this);
    for (auto* node : tape.nodes()) {
        if (!node->is_leaf()) {
            node->grad.assign(node->data.size(), 0.0);
        }
    }
    impl_->grad_buffer()[0] += 1.0;
    const auto& nodes = tape.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward && !node->grad.empty()) {
            node->backward(*node);
        }
    }
}

Tape Tape::build(const Tensor& root) {
    Tape tape;
    std::unordered_set<const TensorImpl*> visited;
    // iterative post-order DFS
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(root.impl().get(), 0);
    visited.insert(root.impl().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            tape.nodes_.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

bool Tape::is_topological() const {
    std::unordered_set<const TensorImpl*> seen;
    for (const auto* node : nodes_) {
        for (const auto& p : node->parents) {
            if (p->requires_grad && !seen.contains(p.get())) {
                return false;
            }
        }
        seen.insert(node);
    }
    return true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents, BackwardFn backward,
                   const char* op) {
    auto impl = new_impl(shape, std::move(data));
    impl->op = op;
    if (g_grad_enabled) {
        const bool any = std::any_of(parents.begin(), parents.end(), [](const Tensor& t) { return t.requires_grad(); });
        if (any) {
            impl->requires_grad = true;
            impl->backward = std::move(backward);
            impl->parents.reserve(parents.size());
            for (auto& p : parents) {
                impl->parents.push_back(p.impl());
            }
        }
    }
    return Tensor(std::move(impl));
}

void check_finite(std::span<const double> values, const char* op) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw std::domain_error(std::string(op) + ": non-finite value produced");
        }
    }
}

} // namespace detail

} // namespace ssmqa
