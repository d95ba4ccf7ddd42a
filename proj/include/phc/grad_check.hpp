#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "phc/tensor.hpp"

namespace phc {

struct GradCheckOptions {
    double step = 1e-6;
    /// Probe at most this many coordinates per tensor (evenly strided);
    /// 0 probes every coordinate.
    std::size_t max_coords_per_tensor = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    /// Tensor index and flat coordinate of the worst mismatch.
    std::size_t worst_tensor = 0;
    std::size_t worst_coord = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences, perturbing the values of `params` in place. The error per
/// coordinate is |a - n| / max(1, |a|, |n|).
GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                           const GradCheckOptions& options = {});

inline double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double step) {
    return grad_check(f, params, GradCheckOptions{step, 0}).max_rel_error;
}

} // namespace phc
