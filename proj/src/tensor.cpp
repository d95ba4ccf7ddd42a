#include "phc/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace phc {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::NonFinite: return "non_finite";
    case ErrorCode::OutOfRange: return "out_of_range";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Io: return "io";
    case ErrorCode::Schema: return "schema";
    }
    return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

namespace detail {

std::vector<double>& Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

std::uint64_t next_seq() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

namespace {
thread_local bool tl_grad_enabled = true;
}

bool grad_enabled() { return tl_grad_enabled; }

} // namespace detail

NoGradGuard::NoGradGuard() : previous_(detail::tl_grad_enabled) { detail::tl_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::tl_grad_enabled = previous_; }

namespace {

detail::NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    for (auto e : shape) {
        require(e > 0, ErrorCode::ShapeMismatch,
                "tensor extents must be positive, got " + shape_to_string(shape));
    }
    require(shape_numel(shape) == data.size(), ErrorCode::ShapeMismatch,
            "data length " + std::to_string(data.size()) + " does not match shape " +
                shape_to_string(shape));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    node->seq = detail::next_seq();
    return node;
}

const detail::NodePtr& checked(const detail::NodePtr& node) {
    require(node != nullptr, ErrorCode::InvalidArgument, "use of an undefined tensor");
    return node;
}

} // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(make_leaf({1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return checked(node_)->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    require(axis < s.size(), ErrorCode::ShapeMismatch,
            "axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(s));
    return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_)->value.size(); }

std::span<const double> Tensor::data() const { return checked(node_)->value; }

std::span<double> Tensor::mutable_data() { return checked(node_)->value; }

double Tensor::item() const {
    require(numel() == 1, ErrorCode::ShapeMismatch,
            "item() on tensor of shape " + shape_to_string(shape()));
    return node_->value[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
    require(rank() == 2, ErrorCode::ShapeMismatch, "at(i, j) requires a matrix");
    return node_->value[i * node_->shape[1] + j];
}

bool Tensor::requires_grad() const { return checked(node_)->requires_grad; }

void Tensor::set_requires_grad(bool flag) { checked(node_)->requires_grad = flag; }

bool Tensor::has_grad() const { return !checked(node_)->grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_)->grad; }

std::span<double> Tensor::mutable_grad() { return checked(node_)->grad_buffer(); }

void Tensor::zero_grad() {
    auto& g = checked(node_)->grad;
    std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const {
    const auto& n = checked(node_);
    return Tensor(make_leaf(n->shape, n->value, false));
}

Tensor Tensor::clone() const { return detach(); }

const char* Tensor::op_name() const { return checked(node_)->op; }

void Tensor::backward() const { Tape::record(*this).backward(); }

Tape Tape::record(const Tensor& root) {
    Tape tape;
    tape.root_ = checked(root.node());
    std::unordered_set<const detail::Node*> seen;
    std::vector<detail::NodePtr> out;
    // Walk from the root, keeping owning pointers via the parents' input lists.
    std::vector<detail::NodePtr> frontier{tape.root_};
    seen.insert(tape.root_.get());
    while (!frontier.empty()) {
        auto node = std::move(frontier.back());
        frontier.pop_back();
        if (!node->requires_grad) continue;
        out.push_back(node);
        for (const auto& in : node->inputs) {
            if (seen.insert(in.get()).second) frontier.push_back(in);
        }
    }
    std::sort(out.begin(), out.end(),
              [](const detail::NodePtr& a, const detail::NodePtr& b) { return a->seq < b->seq; });
    tape.nodes_ = std::move(out);
    return tape;
}

void Tape::backward() {
    require(root_ != nullptr, ErrorCode::InvalidArgument, "backward on empty tape");
    require(root_->value.size() == 1, ErrorCode::ShapeMismatch,
            "backward requires a scalar loss, got shape " + shape_to_string(root_->shape));
    require(root_->requires_grad, ErrorCode::InvalidArgument,
            "loss does not depend on any tensor that requires grad");
    // Interior adjoints start from zero on every pass; leaves accumulate.
    for (auto& node : nodes_) {
        if (node->backward) node->grad.assign(node->value.size(), 0.0);
    }
    root_->grad_buffer()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        auto& node = **it;
        if (node.backward) node.backward(node);
    }
}

} // namespace phc
