#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ssmqa {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

// Propagates the node's own grad into its parents' grads.
using BackwardFn = std::function<void(TensorImpl& self)>;

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until first accumulation
    bool requires_grad = false;
    std::vector<ImplPtr> parents;
    BackwardFn backward;
    const char* op = "leaf";

    bool is_leaf() const { return parents.empty(); }
    // Allocates the grad buffer on first use.
    std::vector<double>& grad_buffer();
};

// Dense row-major array of doubles with optional reverse-mode gradient
// tracking. Copies share storage; use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(ImplPtr impl) : impl_(std::move(impl)) {}

    static Tensor zeros(const Shape& shape);
    static Tensor ones(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor uniform(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);
    static Tensor normal(const Shape& shape, std::uint64_t seed, double stddev);
    static Tensor from_values(const Shape& shape, std::vector<double> values);
    static Tensor scalar(double value) { return from_values({}, {value}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::int64_t dim(int axis) const; // negative axis counts from the end
    int rank() const { return static_cast<int>(shape().size()); }
    std::size_t numel() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;
    double operator[](std::size_t flat) const { return data()[flat]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const double> grad() const; // zeros when never accumulated
    void zero_grad();

    // Reverse pass from a scalar. Leaf grads accumulate across calls.
    void backward() const;

    Tensor detach() const; // shares nothing, tracks nothing
    Tensor clone() const { return detach(); }

    const char* op_name() const;
    const ImplPtr& impl() const { return impl_; }

private:
    ImplPtr impl_;
};

// Ordered list of graph nodes; every node appears after all of its parents.
class Tape {
public:
    static Tape build(const Tensor& root);

    const std::vector<TensorImpl*>& nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }
    bool is_topological() const;

private:
    std::vector<TensorImpl*> nodes_;
};

bool grad_enabled();

// Disables graph recording in scope (evaluation, optimizer updates).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

// Builds an op result; records the graph only when grad mode is on and some
// parent requires grad.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents, BackwardFn backward,
                   const char* op);

// Adds into a parent's grad when that parent is tracked.
inline bool tracks(const ImplPtr& p) { return p && p->requires_grad; }

void check_finite(std::span<const double> values, const char* op);

} // namespace detail

} // namespace ssmqa
