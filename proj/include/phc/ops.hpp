#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "phc/tensor.hpp"

// Differentiable primitives. Every function checks shapes, rejects non-finite
// results and, when any input requires grad, records an exact adjoint.
namespace phc::ops {

enum class SegmentReduce { Sum, Mean, Min, Max };

// -- linear algebra ---------------------------------------------------------

/// (m x k) . (k x n)
Tensor matmul(const Tensor& a, const Tensor& b);
/// (m x k) . (n x k)^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// Kronecker product of two matrices.
Tensor kron(const Tensor& x, const Tensor& y);
/// sum_i C[i] (x) W[i] for stacks C: (s, p, q) and W: (s, r, c); result (p r, q c).
Tensor kron_sum(const Tensor& c_stack, const Tensor& w_stack);

// -- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor add_n(std::span<const Tensor> terms);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// x (r x c) + bias (c), broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);
/// x * s for a single-element tensor s.
Tensor mul_scalar(const Tensor& x, const Tensor& s);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor abs(const Tensor& x);

// -- reductions and layout ---------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// Concatenates 2-D tensors along axis 0 (rows) or 1 (columns).
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Repeats the columns of a 2-D tensor `times` times: [x, x, ..., x].
Tensor tile_cols(const Tensor& x, std::size_t times);
/// rows[i] = table[indices[i]].
Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> indices);

// -- segment operations over edge lists -----------------------------------

/// Reduces rows of `values` (E x k) into `num_segments` rows. Empty segments
/// produce zeros for every mode. Min/Max ties resolve to the lowest row index,
/// and the adjoint flows only into that row.
Tensor segment_reduce(const Tensor& values, std::span<const std::int64_t> segments,
                      std::size_t num_segments, SegmentReduce mode);
Tensor segment_sum(const Tensor& values, std::span<const std::int64_t> segments,
                   std::size_t num_segments);
/// Columnwise softmax of `logits` (E x k) within each segment.
Tensor segment_softmax(const Tensor& logits, std::span<const std::int64_t> segments,
                       std::size_t num_segments);

// -- normalisation -------------------------------------------------------------

struct BatchMoments {
    std::vector<double> mean;
    std::vector<double> var; // biased (divides by b)
};

/// Per-column batch normalisation of x (b x c) with scale gamma and shift beta.
/// When `moments` is non-null it receives the batch statistics.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        double eps, BatchMoments* moments = nullptr);
/// Same normalisation with fixed statistics (treated as constants).
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       std::span<const double> mean, std::span<const double> var,
                       double eps);

// -- regulariser and loss kernels ---------------------------------------------

/// For a stack W of shape (n, r, c) returns (r, c) with the l_p norm along
/// axis 0. The adjoint at an all-zero fibre is taken as zero.
Tensor stack_lp_norm(const Tensor& w_stack, double p);

/// mean |pred - target| over entries whose target is not NaN.
Tensor mae_loss(const Tensor& pred, std::span<const double> target);
/// Mean sigmoid cross-entropy over entries whose target is not NaN.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> target);
/// Mean softmax cross-entropy of logits (b x C) against integer labels.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> labels);

} // namespace phc::ops
