#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "phc/error.hpp"

namespace phc {

/// Plain row-major real matrix used by the algebra routines.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    /// Row-list construction, mainly for tests and fixed tables.
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    Matrix operator*(const Matrix& rhs) const;
    Matrix operator+(const Matrix& rhs) const;
    Matrix operator*(double s) const;
    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

enum class ContributionScheme { Complex, Quaternion, ShiftedIdentity, Uniform };

std::string_view to_string(ContributionScheme scheme);
ContributionScheme parse_contribution_scheme(std::string_view name);

/// The n contribution matrices C_1..C_n (each n x n) that define the
/// multiplication rule of an n-dimensional algebra.
struct ContributionSet {
    std::size_t n = 0;
    std::vector<Matrix> matrices;

    /// Throws unless there are exactly n finite n x n matrices.
    void validate() const;
};

/// U = sum_i C_i (x) W_i, shape k x d.
struct AssembledWeight {
    Matrix matrix;
    std::size_t k = 0;
    std::size_t d = 0;
};

/// result[(i p + r), (j q + s)] = X[i, j] * Y[r, s].
Matrix kronecker(const Matrix& x, const Matrix& y);

/// Contribution matrices for the requested scheme.
///
/// - complex (n = 2) and quaternion (n = 4) reproduce the sign pattern of the
///   real 2x2 / 4x4 block representation of the Hamilton product;
/// - shifted-identity gives C_i = diag(1, -1, 1, ...) * P^(i-1), with P the
///   cyclic permutation moving column j to column j + 1;
/// - uniform samples U(-1, 1) from a counter-based stream keyed by
///   (seed, layer_index, matrix index), so the result is independent of
///   construction order.
ContributionSet init_contributions(std::size_t n, ContributionScheme scheme, std::uint64_t seed,
                                   std::uint64_t layer_index = 0);

/// Sum of Kronecker products; every W_i must share one shape.
AssembledWeight assemble(const ContributionSet& c, std::span<const Matrix> weights);

/// s(U) = 1 - mean |U_ij|.
double sparsity(const Matrix& u);

/// kd/n + n^3 (+ k): stored scalars of one PHM layer with trainable
/// contributions.
std::size_t phm_param_count(std::size_t n, std::size_t k, std::size_t d, bool with_bias);

/// Row-major CSV, 17 significant digits, '.' decimal separator.
void write_csv(std::ostream& os, const Matrix& m);

/// Number of non-zero entries.
std::size_t count_nonzero(const Matrix& m);

} // namespace phc
