#include "phc/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace phc {

GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                           const GradCheckOptions& options) {
    require(options.step > 0.0, ErrorCode::InvalidArgument, "grad_check: step must be positive");
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tensor loss = f();
    require(loss.numel() == 1, ErrorCode::ShapeMismatch, "grad_check: objective must be scalar");
    loss.backward();

    GradCheckResult result;
    const double h = options.step;
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& p = params[t];
        const std::size_t n = p.numel();
        std::vector<double> analytic(n, 0.0);
        if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());

        std::size_t stride = 1;
        if (options.max_coords_per_tensor > 0 && n > options.max_coords_per_tensor) {
            stride = (n + options.max_coords_per_tensor - 1) / options.max_coords_per_tensor;
        }
        auto values = p.mutable_data();
        for (std::size_t i = 0; i < n; i += stride) {
            const double orig = values[i];
            values[i] = orig + h;
            const double up = f().item();
            values[i] = orig - h;
            const double down = f().item();
            values[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            if (!std::isfinite(numeric)) fail(ErrorCode::NonFinite, "grad_check: non-finite difference");
            const double denom = std::max({1.0, std::fabs(analytic[i]), std::fabs(numeric)});
            const double err = std::fabs(analytic[i] - numeric) / denom;
            ++result.coords_checked;
            if (err > result.max_rel_error || result.coords_checked == 1) {
                result.max_rel_error = std::max(result.max_rel_error, err);
                result.worst_tensor = t;
                result.worst_coord = i;
                result.worst_analytic = analytic[i];
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

} // namespace phc
