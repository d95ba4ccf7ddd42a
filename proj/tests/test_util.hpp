#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "phc/algebra.hpp"
#include "phc/tensor.hpp"

namespace phc::testing {

inline std::vector<double> randn(std::size_t count, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<double> v(count);
    for (auto& x : v) x = normal(rng);
    return v;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true, double scale = 1.0) {
    const auto count = shape_numel(shape);
    return Tensor::from(std::move(shape), randn(count, rng, scale), requires_grad);
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    return Matrix(rows, cols, randn(rows * cols, rng));
}

// Triple-loop product, row-major a (m x k) times b (k x n).
inline std::vector<double> naive_matmul(std::span<const double> a, std::span<const double> b, std::size_t m,
                                        std::size_t k, std::size_t n) {
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) out[i * n + j] += a[i * k + p] * b[p * n + j];
    return out;
}

// Rank by Gaussian elimination with partial pivoting.
inline std::size_t matrix_rank(Matrix m, double tol = 1e-9) {
    std::size_t rank = 0;
    for (std::size_t col = 0; col < m.cols() && rank < m.rows(); ++col) {
        std::size_t pivot = rank;
        for (std::size_t r = rank; r < m.rows(); ++r)
            if (std::fabs(m(r, col)) > std::fabs(m(pivot, col))) pivot = r;
        if (std::fabs(m(pivot, col)) < tol) continue;
        for (std::size_t c = 0; c < m.cols(); ++c) std::swap(m(rank, c), m(pivot, c));
        for (std::size_t r = rank + 1; r < m.rows(); ++r) {
            const double f = m(r, col) / m(rank, col);
            for (std::size_t c = col; c < m.cols(); ++c) m(r, c) -= f * m(rank, c);
        }
        ++rank;
    }
    return rank;
}

inline double determinant(Matrix m) {
    const std::size_t n = m.rows();
    double det = 1.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col; r < n; ++r)
            if (std::fabs(m(r, col)) > std::fabs(m(pivot, col))) pivot = r;
        if (m(pivot, col) == 0.0) return 0.0;
        if (pivot != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(m(col, c), m(pivot, c));
            det = -det;
        }
        det *= m(col, col);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = m(r, col) / m(col, col);
            for (std::size_t c = col; c < n; ++c) m(r, c) -= f * m(col, c);
        }
    }
    return det;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double worst = a.size() == b.size() ? 0.0 : INFINITY;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
    return worst;
}

// Hamilton product of a quaternion weight (Wa..Wd, each k x d) with q = (qa..qd),
// written out component by component.
struct QuaternionOracle {
    std::vector<Matrix> w; // a, b, c, d

    std::vector<double> apply(std::span<const double> q) const {
        const std::size_t k = w[0].rows(), d = w[0].cols();
        auto mv = [&](int which, std::size_t part) {
            std::vector<double> out(k, 0.0);
            for (std::size_t r = 0; r < k; ++r)
                for (std::size_t c = 0; c < d; ++c) out[r] += w[which](r, c) * q[part * d + c];
            return out;
        };
        std::vector<double> y(4 * k);
        // rows of the sign table: (component of W, sign) per input part a, b, c, d
        const int idx[4][4] = {{0, 1, 2, 3}, {1, 0, 3, 2}, {2, 3, 0, 1}, {3, 2, 1, 0}};
        const double sgn[4][4] = {{1, -1, -1, -1}, {1, 1, -1, 1}, {1, 1, 1, -1}, {1, -1, 1, 1}};
        for (std::size_t out = 0; out < 4; ++out)
            for (std::size_t part = 0; part < 4; ++part) {
                const auto term = mv(idx[out][part], part);
                for (std::size_t r = 0; r < k; ++r) y[out * k + r] += sgn[out][part] * term[r];
            }
        return y;
    }
};

} // namespace phc::testing
