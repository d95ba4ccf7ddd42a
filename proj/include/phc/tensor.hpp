#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "phc/error.hpp"

namespace phc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One recorded value. Leaves have no inputs and no backward function.
/// `seq` increases monotonically with creation, so sorting by it yields a
/// topological order of any recorded graph.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::uint64_t seq = 0;
    const char* op = "leaf";
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backward;

    /// Lazily allocates the adjoint buffer.
    std::vector<double>& grad_buffer();
};

std::uint64_t next_seq();
/// False inside a NoGradGuard on the calling thread.
bool grad_enabled();

} // namespace detail

/// Dense row-major f64 array with an optional gradient accumulator.
///
/// Copies share the underlying storage (handle semantics), which is what lets
/// a parameter be used many times in one forward pass and receive the sum of
/// all adjoints in backward().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    /// Mutable access to the stored values; intended for parameters and buffers.
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t i, std::size_t j) const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);

    bool has_grad() const;
    /// Empty span until a backward pass has reached this tensor.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Same values, cut from the recorded graph.
    Tensor detach() const;
    /// Deep copy of values (never of gradient or graph links).
    Tensor clone() const;

    /// Runs reverse accumulation from this scalar.
    void backward() const;

    const char* op_name() const;
    const detail::NodePtr& node() const { return node_; }
    explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

private:
    detail::NodePtr node_;
};

/// Recorded primitives reachable from a root, in topological order
/// (inputs before consumers). Built on demand from the node links.
/// Primitives evaluated while a guard is alive record no graph, so their
/// results never require grad.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

class Tape {
public:
    static Tape record(const Tensor& root);

    std::size_t size() const { return nodes_.size(); }
    const std::vector<detail::NodePtr>& nodes() const { return nodes_; }

    /// Seeds d(root)/d(root) = 1 and runs every adjoint rule in reverse order.
    void backward();

private:
    detail::NodePtr root_;
    std::vector<detail::NodePtr> nodes_;
};

inline void backward(const Tensor& loss) { loss.backward(); }

} // namespace phc
