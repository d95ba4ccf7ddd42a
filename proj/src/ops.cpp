#include "phc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include <Eigen/Core>

namespace phc::ops {

namespace {

using detail::Node;
using detail::NodePtr;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
    return ConstMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(std::vector<double>& v, std::size_t rows, std::size_t cols) {
    return MutMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void check_finite(const char* op, const std::vector<double>& v) {
    const Eigen::Map<const Eigen::ArrayXd> a(v.data(), static_cast<Eigen::Index>(v.size()));
    if (!a.allFinite()) fail(ErrorCode::NonFinite, std::string("non-finite value produced by ") + op);
}

void expect_rank(const char* op, const Tensor& t, std::size_t rank) {
    if (!(t.rank() == rank))
        fail(ErrorCode::ShapeMismatch, std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                shape_to_string(t.shape()));
}

void expect_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape()))
        fail(ErrorCode::ShapeMismatch, std::string(op) + ": shapes " + shape_to_string(a.shape()) + " and " +
                shape_to_string(b.shape()) + " differ");
}

/// Wraps a freshly computed value as a tensor, recording the adjoint rule only
/// when some input takes part in differentiation.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward) {
    check_finite(op, value);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->seq = detail::next_seq();
    node->op = op;
    bool needs_grad = false;
    if (detail::grad_enabled())
        for (const auto* t : inputs) needs_grad = needs_grad || t->requires_grad();
    if (needs_grad) {
        node->requires_grad = true;
        for (const auto* t : inputs) node->inputs.push_back(t->node());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

Tensor make_result_n(const char* op, Shape shape, std::vector<double> value,
                     std::span<const Tensor> inputs, std::function<void(Node&)> backward) {
    check_finite(op, value);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->seq = detail::next_seq();
    node->op = op;
    bool needs_grad = false;
    if (detail::grad_enabled())
        for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
    if (needs_grad) {
        node->requires_grad = true;
        for (const auto& t : inputs) node->inputs.push_back(t.node());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

bool wants(const NodePtr& n) { return n->requires_grad; }

void check_segments(const char* op, std::span<const std::int64_t> segments, std::size_t rows,
                    std::size_t num_segments) {
    if (!(segments.size() == rows))
        fail(ErrorCode::ShapeMismatch,
             std::string(op) + ": " + std::to_string(segments.size()) + " segment ids for " +
                std::to_string(rows) + " rows");
    for (auto s : segments) {
        if (!(s >= 0 && static_cast<std::size_t>(s) < num_segments))
            fail(ErrorCode::OutOfRange, std::string(op) + ": segment id " + std::to_string(s) + " outside [0, " +
                    std::to_string(num_segments) + ")");
    }
}

} // namespace

// -- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    expect_rank("matmul", a, 2);
    expect_rank("matmul", b, 2);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (!(b.dim(0) == k))
        fail(ErrorCode::ShapeMismatch, "matmul: inner dimensions differ: " + shape_to_string(a.shape()) + " x " +
                shape_to_string(b.shape()));
    std::vector<double> out(m * n);
    as_matrix(out, m, n).noalias() = as_matrix(a.node()->value, m, k) * as_matrix(b.node()->value, k, n);
    return make_result("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
        auto g = as_matrix(std::as_const(self.grad), m, n);
        auto& na = self.inputs[0];
        auto& nb = self.inputs[1];
        if (wants(na)) {
            as_matrix(na->grad_buffer(), m, k).noalias() += g * as_matrix(nb->value, k, n).transpose();
        }
        if (wants(nb)) {
            as_matrix(nb->grad_buffer(), k, n).noalias() += as_matrix(na->value, m, k).transpose() * g;
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    expect_rank("matmul_nt", a, 2);
    expect_rank("matmul_nt", b, 2);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (!(b.dim(1) == k))
        fail(ErrorCode::ShapeMismatch, "matmul_nt: inner dimensions differ: " + shape_to_string(a.shape()) + " x " +
                shape_to_string(b.shape()) + "^T");
    std::vector<double> out(m * n);
    as_matrix(out, m, n).noalias() =
        as_matrix(a.node()->value, m, k) * as_matrix(b.node()->value, n, k).transpose();
    return make_result("matmul_nt", {m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
        auto g = as_matrix(std::as_const(self.grad), m, n);
        auto& na = self.inputs[0];
        auto& nb = self.inputs[1];
        if (wants(na)) as_matrix(na->grad_buffer(), m, k).noalias() += g * as_matrix(nb->value, n, k);
        if (wants(nb)) {
            as_matrix(nb->grad_buffer(), n, k).noalias() += g.transpose() * as_matrix(na->value, m, k);
        }
    });
}

Tensor kron(const Tensor& x, const Tensor& y) {
    expect_rank("kron", x, 2);
    expect_rank("kron", y, 2);
    const std::size_t a = x.dim(0), b = x.dim(1), p = y.dim(0), q = y.dim(1);
    const std::size_t cols = b * q;
    const auto& xv = x.node()->value;
    const auto& yv = y.node()->value;
    std::vector<double> out(a * p * cols);
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < b; ++j) {
            const double xij = xv[i * b + j];
            for (std::size_t r = 0; r < p; ++r)
                for (std::size_t s = 0; s < q; ++s) out[(i * p + r) * cols + j * q + s] = xij * yv[r * q + s];
        }
    return make_result("kron", {a * p, cols}, std::move(out), {&x, &y}, [a, b, p, q, cols](Node& self) {
        auto& nx = self.inputs[0];
        auto& ny = self.inputs[1];
        const auto& g = self.grad;
        // Each block (i, j) of the adjoint contracts against Y for dX and is
        // weighted by X[i, j] for dY.
        for (std::size_t i = 0; i < a; ++i)
            for (std::size_t j = 0; j < b; ++j) {
                double block_dot = 0.0;
                const double xij = nx->value[i * b + j];
                for (std::size_t r = 0; r < p; ++r)
                    for (std::size_t s = 0; s < q; ++s) {
                        const double gv = g[(i * p + r) * cols + j * q + s];
                        block_dot += gv * ny->value[r * q + s];
                        if (wants(ny)) ny->grad_buffer()[r * q + s] += gv * xij;
                    }
                if (wants(nx)) nx->grad_buffer()[i * b + j] += block_dot;
            }
    });
}

Tensor kron_sum(const Tensor& c_stack, const Tensor& w_stack) {
    expect_rank("kron_sum", c_stack, 3);
    expect_rank("kron_sum", w_stack, 3);
    const std::size_t s = c_stack.dim(0), p = c_stack.dim(1), q = c_stack.dim(2);
    const std::size_t r = w_stack.dim(1), c = w_stack.dim(2);
    if (!(w_stack.dim(0) == s))
        fail(ErrorCode::ShapeMismatch, "kron_sum: " + std::to_string(s) + " contribution matrices but " +
                std::to_string(w_stack.dim(0)) + " weight matrices");
    const std::size_t cols = q * c;
    const auto& cv = c_stack.node()->value;
    const auto& wv = w_stack.node()->value;
    std::vector<double> out(p * r * cols, 0.0);
    for (std::size_t t = 0; t < s; ++t) {
        const double* w = wv.data() + t * r * c;
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) {
                const double coef = cv[(t * p + i) * q + j];
                if (coef == 0.0) continue;
                for (std::size_t rr = 0; rr < r; ++rr) {
                    double* dst = out.data() + (i * r + rr) * cols + j * c;
                    const double* src = w + rr * c;
                    for (std::size_t cc = 0; cc < c; ++cc) dst[cc] += coef * src[cc];
                }
            }
    }
    return make_result("kron_sum", {p * r, cols}, std::move(out), {&c_stack, &w_stack},
                       [s, p, q, r, c, cols](Node& self) {
        auto& nc = self.inputs[0];
        auto& nw = self.inputs[1];
        const auto& g = self.grad;
        for (std::size_t t = 0; t < s; ++t) {
            const double* w = nw->value.data() + t * r * c;
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < q; ++j) {
                    const double coef = nc->value[(t * p + i) * q + j];
                    double block_dot = 0.0;
                    for (std::size_t rr = 0; rr < r; ++rr) {
                        const double* gb = g.data() + (i * r + rr) * cols + j * c;
                        const double* wr = w + rr * c;
                        for (std::size_t cc = 0; cc < c; ++cc) block_dot += gb[cc] * wr[cc];
                        if (wants(nw) && coef != 0.0) {
                            double* dw = nw->grad_buffer().data() + t * r * c + rr * c;
                            for (std::size_t cc = 0; cc < c; ++cc) dw[cc] += coef * gb[cc];
                        }
                    }
                    if (wants(nc)) nc->grad_buffer()[(t * p + i) * q + j] += block_dot;
                }
        }
    });
}

// -- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    expect_same_shape("add", a, b);
    std::vector<double> out(a.numel());
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return make_result("add", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
        for (auto& in : self.inputs) {
            if (!wants(in)) continue;
            auto& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor add_n(std::span<const Tensor> terms) {
    if (!(!terms.empty())) fail(ErrorCode::InvalidArgument, "add_n: no terms");
    for (const auto& t : terms) expect_same_shape("add_n", terms[0], t);
    std::vector<double> out(terms[0].numel(), 0.0);
    for (const auto& t : terms) {
        const auto& v = t.node()->value;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
    }
    return make_result_n("add_n", terms[0].shape(), std::move(out), terms, [](Node& self) {
        for (auto& in : self.inputs) {
            if (!wants(in)) continue;
            auto& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    expect_same_shape("sub", a, b);
    std::vector<double> out(a.numel());
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return make_result("sub", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
        if (wants(self.inputs[0])) {
            auto& g = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants(self.inputs[1])) {
            auto& g = self.inputs[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    expect_same_shape("mul", a, b);
    std::vector<double> out(a.numel());
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return make_result("mul", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
        auto& na = self.inputs[0];
        auto& nb = self.inputs[1];
        if (wants(na)) {
            auto& g = na->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb->value[i];
        }
        if (wants(nb)) {
            auto& g = nb->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na->value[i];
        }
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    expect_rank("add_bias", x, 2);
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (!(bias.numel() == cols))
        fail(ErrorCode::ShapeMismatch, "add_bias: bias of length " + std::to_string(bias.numel()) + " for " +
                std::to_string(cols) + " columns");
    std::vector<double> out(x.node()->value);
    const auto& bv = bias.node()->value;
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += bv[j];
    return make_result("add_bias", x.shape(), std::move(out), {&x, &bias}, [rows, cols](Node& self) {
        if (wants(self.inputs[0])) {
            auto& g = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants(self.inputs[1])) {
            auto& g = self.inputs[1]->grad_buffer();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) g[j] += self.grad[i * cols + j];
        }
    });
}

Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.node()->value);
    for (auto& v : out) v *= factor;
    return make_result("scale", x.shape(), std::move(out), {&x}, [factor](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
    if (!(s.numel() == 1))
        fail(ErrorCode::ShapeMismatch, "mul_scalar: factor must have one element, got " + shape_to_string(s.shape()));
    const double factor = s.item();
    std::vector<double> out(x.node()->value);
    for (auto& v : out) v *= factor;
    return make_result("mul_scalar", x.shape(), std::move(out), {&x, &s}, [](Node& self) {
        auto& nx = self.inputs[0];
        auto& ns = self.inputs[1];
        const double factor = ns->value[0];
        if (wants(nx)) {
            auto& g = nx->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
        }
        if (wants(ns)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * nx->value[i];
            ns->grad_buffer()[0] += acc;
        }
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.node()->value);
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
    return make_result("relu", x.shape(), std::move(out), {&x}, [](Node& self) {
        auto& nx = self.inputs[0];
        auto& g = nx->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (nx->value[i] > 0.0) g[i] += self.grad[i];
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.node()->value);
    for (auto& v : out) {
        v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return make_result("sigmoid", x.shape(), std::move(out), {&x}, [](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = self.value[i];
            g[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

Tensor exp(const Tensor& x) {
    std::vector<double> out(x.node()->value);
    for (auto& v : out) v = std::exp(v);
    return make_result("exp", x.shape(), std::move(out), {&x}, [](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
    });
}

Tensor abs(const Tensor& x) {
    std::vector<double> out(x.node()->value);
    for (auto& v : out) v = std::fabs(v);
    return make_result("abs", x.shape(), std::move(out), {&x}, [](Node& self) {
        auto& nx = self.inputs[0];
        auto& g = nx->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = nx->value[i];
            g[i] += self.grad[i] * static_cast<double>((v > 0.0) - (v < 0.0));
        }
    });
}

// -- reductions and layout ---------------------------------------------------

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return make_result("sum", {1}, {acc}, {&x}, [](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    const double n = static_cast<double>(x.numel());
    return make_result("mean", {1}, {acc / n}, {&x}, [n](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0] / n;
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (!(shape_numel(shape) == x.numel()))
        fail(ErrorCode::ShapeMismatch,
             "reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
    return make_result("reshape", std::move(shape), x.node()->value, {&x}, [](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (!(!parts.empty())) fail(ErrorCode::InvalidArgument, "concat: no parts");
    if (!(axis <= 1)) fail(ErrorCode::InvalidArgument, "concat: axis must be 0 or 1");
    for (const auto& p : parts) expect_rank("concat", p, 2);
    const std::size_t fixed = parts[0].dim(1 - axis);
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (!(p.dim(1 - axis) == fixed))
            fail(ErrorCode::ShapeMismatch, "concat: mismatched extent " + shape_to_string(p.shape()) + " vs " +
                    shape_to_string(parts[0].shape()));
        total += p.dim(axis);
    }
    const std::size_t rows = axis == 0 ? total : fixed;
    const std::size_t cols = axis == 0 ? fixed : total;
    std::vector<double> out(rows * cols);
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const auto& v = p.node()->value;
        if (axis == 0) {
            std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(offset * cols));
        } else {
            const std::size_t w = p.dim(1);
            for (std::size_t i = 0; i < rows; ++i)
                std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * w), w,
                            out.begin() + static_cast<std::ptrdiff_t>(i * cols + offset));
        }
        offset += p.dim(axis);
    }
    return make_result_n("concat", {rows, cols}, std::move(out), parts,
                         [axis, rows, cols, offsets](Node& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            auto& in = self.inputs[k];
            if (!wants(in)) continue;
            auto& g = in->grad_buffer();
            if (axis == 0) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] * cols + i];
            } else {
                const std::size_t w = in->shape[1];
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * cols + offsets[k] + j];
            }
        }
    });
}

Tensor tile_cols(const Tensor& x, std::size_t times) {
    expect_rank("tile_cols", x, 2);
    if (!(times >= 1)) fail(ErrorCode::InvalidArgument, "tile_cols: times must be positive");
    const std::size_t rows = x.dim(0), w = x.dim(1), cols = w * times;
    const auto& v = x.node()->value;
    std::vector<double> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t t = 0; t < times; ++t)
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * w), w,
                        out.begin() + static_cast<std::ptrdiff_t>(i * cols + t * w));
    return make_result("tile_cols", {rows, cols}, std::move(out), {&x}, [rows, w, times, cols](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t t = 0; t < times; ++t)
                for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * cols + t * w + j];
    });
}

Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> indices) {
    expect_rank("gather_rows", table, 2);
    if (!(!indices.empty())) fail(ErrorCode::InvalidArgument, "gather_rows: no indices");
    const std::size_t vocab = table.dim(0), w = table.dim(1);
    for (auto idx : indices) {
        if (!(idx >= 0 && static_cast<std::size_t>(idx) < vocab))
            fail(ErrorCode::OutOfRange, "gather_rows: index " + std::to_string(idx) + " outside table of " +
                    std::to_string(vocab) + " rows");
    }
    const auto& v = table.node()->value;
    std::vector<double> out(indices.size() * w);
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(indices[i]) * w), w,
                    out.begin() + static_cast<std::ptrdiff_t>(i * w));
    std::vector<std::int64_t> idx(indices.begin(), indices.end());
    return make_result("gather_rows", {indices.size(), w}, std::move(out), {&table},
                       [idx = std::move(idx), w](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            double* dst = g.data() + static_cast<std::size_t>(idx[i]) * w;
            for (std::size_t j = 0; j < w; ++j) dst[j] += self.grad[i * w + j];
        }
    });
}

// -- segment operations over edge lists -----------------------------------

Tensor segment_reduce(const Tensor& values, std::span<const std::int64_t> segments,
                      std::size_t num_segments, SegmentReduce mode) {
    expect_rank("segment_reduce", values, 2);
    if (!(num_segments > 0)) fail(ErrorCode::InvalidArgument, "segment_reduce: zero segments");
    const std::size_t rows = values.dim(0), w = values.dim(1);
    check_segments("segment_reduce", segments, rows, num_segments);
    const auto& v = values.node()->value;
    std::vector<double> out(num_segments * w, 0.0);
    std::vector<double> counts(num_segments, 0.0);
    for (auto s : segments) counts[static_cast<std::size_t>(s)] += 1.0;
    std::vector<std::int64_t> seg(segments.begin(), segments.end());

    if (mode == SegmentReduce::Sum || mode == SegmentReduce::Mean) {
        for (std::size_t e = 0; e < rows; ++e) {
            double* dst = out.data() + static_cast<std::size_t>(seg[e]) * w;
            for (std::size_t j = 0; j < w; ++j) dst[j] += v[e * w + j];
        }
        const bool is_mean = mode == SegmentReduce::Mean;
        if (is_mean) {
            for (std::size_t s = 0; s < num_segments; ++s) {
                if (counts[s] == 0.0) continue;
                for (std::size_t j = 0; j < w; ++j) out[s * w + j] /= counts[s];
            }
        }
        return make_result(is_mean ? "segment_mean" : "segment_sum", {num_segments, w}, std::move(out),
                           {&values}, [seg = std::move(seg), counts = std::move(counts), w, is_mean](Node& self) {
            auto& g = self.inputs[0]->grad_buffer();
            for (std::size_t e = 0; e < seg.size(); ++e) {
                const auto s = static_cast<std::size_t>(seg[e]);
                const double f = is_mean ? 1.0 / counts[s] : 1.0;
                for (std::size_t j = 0; j < w; ++j) g[e * w + j] += f * self.grad[s * w + j];
            }
        });
    }

    const bool is_max = mode == SegmentReduce::Max;
    // arg[s * w + j] holds the winning row; -1 marks an empty segment.
    std::vector<std::int64_t> arg(num_segments * w, -1);
    for (std::size_t e = 0; e < rows; ++e) {
        const auto s = static_cast<std::size_t>(seg[e]);
        for (std::size_t j = 0; j < w; ++j) {
            auto& a = arg[s * w + j];
            const double x = v[e * w + j];
            if (a < 0 || (is_max ? x > v[static_cast<std::size_t>(a) * w + j]
                                 : x < v[static_cast<std::size_t>(a) * w + j])) {
                a = static_cast<std::int64_t>(e);
            }
        }
    }
    for (std::size_t i = 0; i < arg.size(); ++i) {
        if (arg[i] >= 0) out[i] = v[static_cast<std::size_t>(arg[i]) * w + i % w];
    }
    return make_result(is_max ? "segment_max" : "segment_min", {num_segments, w}, std::move(out), {&values},
                       [arg = std::move(arg), w](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < arg.size(); ++i) {
            if (arg[i] >= 0) g[static_cast<std::size_t>(arg[i]) * w + i % w] += self.grad[i];
        }
    });
}

Tensor segment_sum(const Tensor& values, std::span<const std::int64_t> segments,
                   std::size_t num_segments) {
    return segment_reduce(values, segments, num_segments, SegmentReduce::Sum);
}

Tensor segment_softmax(const Tensor& logits, std::span<const std::int64_t> segments,
                       std::size_t num_segments) {
    expect_rank("segment_softmax", logits, 2);
    const std::size_t rows = logits.dim(0), w = logits.dim(1);
    check_segments("segment_softmax", segments, rows, num_segments);
    const auto& v = logits.node()->value;
    std::vector<double> peak(num_segments * w, -std::numeric_limits<double>::infinity());
    for (std::size_t e = 0; e < rows; ++e) {
        const auto s = static_cast<std::size_t>(segments[e]);
        for (std::size_t j = 0; j < w; ++j) peak[s * w + j] = std::max(peak[s * w + j], v[e * w + j]);
    }
    std::vector<double> out(rows * w);
    std::vector<double> denom(num_segments * w, 0.0);
    for (std::size_t e = 0; e < rows; ++e) {
        const auto s = static_cast<std::size_t>(segments[e]);
        for (std::size_t j = 0; j < w; ++j) {
            const double ex = std::exp(v[e * w + j] - peak[s * w + j]);
            out[e * w + j] = ex;
            denom[s * w + j] += ex;
        }
    }
    for (std::size_t e = 0; e < rows; ++e) {
        const auto s = static_cast<std::size_t>(segments[e]);
        for (std::size_t j = 0; j < w; ++j) out[e * w + j] /= denom[s * w + j];
    }
    std::vector<std::int64_t> seg(segments.begin(), segments.end());
    return make_result("segment_softmax", {rows, w}, std::move(out), {&logits},
                       [seg = std::move(seg), num_segments, w](Node& self) {
        // dx_e = y_e * (g_e - sum_{e' in segment} y_e' g_e')
        std::vector<double> dot(num_segments * w, 0.0);
        for (std::size_t e = 0; e < seg.size(); ++e) {
            const auto s = static_cast<std::size_t>(seg[e]);
            for (std::size_t j = 0; j < w; ++j) dot[s * w + j] += self.value[e * w + j] * self.grad[e * w + j];
        }
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t e = 0; e < seg.size(); ++e) {
            const auto s = static_cast<std::size_t>(seg[e]);
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t i = e * w + j;
                g[i] += self.value[i] * (self.grad[i] - dot[s * w + j]);
            }
        }
    });
}

// -- normalisation -------------------------------------------------------------

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        BatchMoments* moments) {
    expect_rank("batch_norm", x, 2);
    const std::size_t b = x.dim(0), c = x.dim(1);
    if (!(gamma.numel() == c && beta.numel() == c))
        fail(ErrorCode::ShapeMismatch, "batch_norm: scale/shift length must equal " + std::to_string(c));
    const auto& v = x.node()->value;
    std::vector<double> mu(c, 0.0), var(c, 0.0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) mu[j] += v[i * c + j];
    for (auto& m : mu) m /= static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double d = v[i * c + j] - mu[j];
            var[j] += d * d;
        }
    for (auto& s : var) s /= static_cast<double>(b);
    std::vector<double> inv_std(c), xhat(b * c), out(b * c);
    const auto& gv = gamma.node()->value;
    const auto& bv = beta.node()->value;
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const std::size_t k = i * c + j;
            xhat[k] = (v[k] - mu[j]) * inv_std[j];
            out[k] = gv[j] * xhat[k] + bv[j];
        }
    if (moments) *moments = BatchMoments{mu, var};
    return make_result("batch_norm_train", {b, c}, std::move(out), {&x, &gamma, &beta},
                       [b, c, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
        auto& nx = self.inputs[0];
        auto& ng = self.inputs[1];
        auto& nb = self.inputs[2];
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                sum_g[j] += self.grad[i * c + j];
                sum_gx[j] += self.grad[i * c + j] * xhat[i * c + j];
            }
        if (wants(ng)) {
            auto& g = ng->grad_buffer();
            for (std::size_t j = 0; j < c; ++j) g[j] += sum_gx[j];
        }
        if (wants(nb)) {
            auto& g = nb->grad_buffer();
            for (std::size_t j = 0; j < c; ++j) g[j] += sum_g[j];
        }
        if (wants(nx)) {
            auto& g = nx->grad_buffer();
            const double inv_b = 1.0 / static_cast<double>(b);
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    const std::size_t k = i * c + j;
                    const double gamma_j = ng->value[j];
                    g[k] += gamma_j * inv_std[j] * inv_b *
                            (static_cast<double>(b) * self.grad[k] - sum_g[j] - xhat[k] * sum_gx[j]);
                }
        }
    });
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       std::span<const double> mean, std::span<const double> var, double eps) {
    expect_rank("batch_norm", x, 2);
    const std::size_t b = x.dim(0), c = x.dim(1);
    if (!(gamma.numel() == c && beta.numel() == c && mean.size() == c && var.size() == c))
        fail(ErrorCode::ShapeMismatch, "batch_norm: parameter length must equal " + std::to_string(c));
    const auto& v = x.node()->value;
    const auto& gv = gamma.node()->value;
    const auto& bv = beta.node()->value;
    std::vector<double> inv_std(c), xhat(b * c), out(b * c);
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const std::size_t k = i * c + j;
            xhat[k] = (v[k] - mean[j]) * inv_std[j];
            out[k] = gv[j] * xhat[k] + bv[j];
        }
    return make_result("batch_norm_eval", {b, c}, std::move(out), {&x, &gamma, &beta},
                       [b, c, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
        auto& nx = self.inputs[0];
        auto& ng = self.inputs[1];
        auto& nb = self.inputs[2];
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const std::size_t k = i * c + j;
                const double gk = self.grad[k];
                if (wants(nx)) nx->grad_buffer()[k] += gk * ng->value[j] * inv_std[j];
                if (wants(ng)) ng->grad_buffer()[j] += gk * xhat[k];
                if (wants(nb)) nb->grad_buffer()[j] += gk;
            }
    });
}

// -- regulariser and loss kernels ---------------------------------------------

Tensor stack_lp_norm(const Tensor& w_stack, double p) {
    expect_rank("stack_lp_norm", w_stack, 3);
    if (!(p >= 1.0)) fail(ErrorCode::InvalidArgument, "stack_lp_norm: p must be >= 1");
    const std::size_t n = w_stack.dim(0), r = w_stack.dim(1), c = w_stack.dim(2);
    const std::size_t plane = r * c;
    const auto& v = w_stack.node()->value;
    std::vector<double> out(plane, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < plane; ++k) out[k] += std::pow(std::fabs(v[i * plane + k]), p);
    for (auto& o : out) o = std::pow(o, 1.0 / p);
    return make_result("stack_lp_norm", {r, c}, std::move(out), {&w_stack}, [n, plane, p](Node& self) {
        auto& nw = self.inputs[0];
        auto& g = nw->grad_buffer();
        for (std::size_t k = 0; k < plane; ++k) {
            const double norm = self.value[k];
            if (norm == 0.0) continue;
            const double outer = self.grad[k] * std::pow(norm, 1.0 - p);
            for (std::size_t i = 0; i < n; ++i) {
                const double w = nw->value[i * plane + k];
                const double sgn = static_cast<double>((w > 0.0) - (w < 0.0));
                g[i * plane + k] += outer * sgn * std::pow(std::fabs(w), p - 1.0);
            }
        }
    });
}

namespace {

std::size_t count_valid(std::span<const double> target, const char* op) {
    std::size_t valid = 0;
    for (double t : target) valid += std::isnan(t) ? 0 : 1;
    if (!(valid > 0)) fail(ErrorCode::InvalidArgument, std::string(op) + ": all targets are masked");
    return valid;
}

} // namespace

Tensor mae_loss(const Tensor& pred, std::span<const double> target) {
    if (!(pred.numel() == target.size()))
        fail(ErrorCode::ShapeMismatch,
             "mae_loss: " + std::to_string(target.size()) + " targets for prediction of shape " +
                shape_to_string(pred.shape()));
    const double valid = static_cast<double>(count_valid(target, "mae_loss"));
    const auto& pv = pred.node()->value;
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        if (!std::isnan(target[i])) acc += std::fabs(pv[i] - target[i]);
    }
    std::vector<double> t(target.begin(), target.end());
    return make_result("mae_loss", {1}, {acc / valid}, {&pred}, [t = std::move(t), valid](Node& self) {
        auto& np = self.inputs[0];
        auto& g = np->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (std::isnan(t[i])) continue;
            const double d = np->value[i] - t[i];
            g[i] += self.grad[0] * static_cast<double>((d > 0.0) - (d < 0.0)) / valid;
        }
    });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> target) {
    if (!(logits.numel() == target.size()))
        fail(ErrorCode::ShapeMismatch,
             "bce_with_logits: " + std::to_string(target.size()) + " targets for logits of shape " +
                shape_to_string(logits.shape()));
    const double valid = static_cast<double>(count_valid(target, "bce_with_logits"));
    const auto& xv = logits.node()->value;
    double acc = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        if (std::isnan(target[i])) continue;
        const double x = xv[i];
        acc += std::max(x, 0.0) - x * target[i] + std::log1p(std::exp(-std::fabs(x)));
    }
    std::vector<double> t(target.begin(), target.end());
    return make_result("bce_with_logits", {1}, {acc / valid}, {&logits}, [t = std::move(t), valid](Node& self) {
        auto& nx = self.inputs[0];
        auto& g = nx->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (std::isnan(t[i])) continue;
            const double x = nx->value[i];
            const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            g[i] += self.grad[0] * (s - t[i]) / valid;
        }
    });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> labels) {
    expect_rank("softmax_cross_entropy", logits, 2);
    const std::size_t b = logits.dim(0), classes = logits.dim(1);
    if (!(labels.size() == b))
        fail(ErrorCode::ShapeMismatch, "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                std::to_string(b) + " rows");
    const auto& xv = logits.node()->value;
    std::vector<double> probs(b * classes);
    double acc = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const auto label = labels[i];
        if (!(label >= 0 && static_cast<std::size_t>(label) < classes))
            fail(ErrorCode::OutOfRange, "softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                    std::to_string(classes) + ")");
        const double* row = xv.data() + i * classes;
        const double peak = *std::max_element(row, row + classes);
        double z = 0.0;
        for (std::size_t j = 0; j < classes; ++j) z += std::exp(row[j] - peak);
        for (std::size_t j = 0; j < classes; ++j) probs[i * classes + j] = std::exp(row[j] - peak) / z;
        acc += peak + std::log(z) - row[static_cast<std::size_t>(label)];
    }
    std::vector<std::int64_t> lab(labels.begin(), labels.end());
    return make_result("softmax_cross_entropy", {1}, {acc / static_cast<double>(b)}, {&logits},
                       [probs = std::move(probs), lab = std::move(lab), b, classes](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const double f = self.grad[0] / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < classes; ++j) {
                const double onehot = static_cast<std::int64_t>(j) == lab[i] ? 1.0 : 0.0;
                g[i * classes + j] += f * (probs[i * classes + j] - onehot);
            }
    });
}

} // namespace phc::ops
