#include "phc/algebra.hpp"

#include <cmath>
#include <ostream>
#include <string>

#include <fmt/format.h>

#include "phc/random.hpp"

namespace phc {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows * cols, ErrorCode::ShapeMismatch,
            fmt::format("matrix data of length {} for shape {}x{}", data_.size(), rows, cols));
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
        require(r.size() == cols_, ErrorCode::ShapeMismatch, "ragged matrix literal");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::operator*(const Matrix& rhs) const {
    require(cols_ == rhs.rows_, ErrorCode::ShapeMismatch,
            fmt::format("matrix product {}x{} * {}x{}", rows_, cols_, rhs.rows_, rhs.cols_));
    Matrix out(rows_, rhs.cols_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t k = 0; k < cols_; ++k) {
            const double a = (*this)(i, k);
            for (std::size_t j = 0; j < rhs.cols_; ++j) out(i, j) += a * rhs(k, j);
        }
    return out;
}

Matrix Matrix::operator+(const Matrix& rhs) const {
    require(rows_ == rhs.rows_ && cols_ == rhs.cols_, ErrorCode::ShapeMismatch,
            fmt::format("matrix sum {}x{} + {}x{}", rows_, cols_, rhs.rows_, rhs.cols_));
    Matrix out(*this);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] += rhs.data_[i];
    return out;
}

Matrix Matrix::operator*(double s) const {
    Matrix out(*this);
    for (auto& v : out.data_) v *= s;
    return out;
}

std::string_view to_string(ContributionScheme scheme) {
    switch (scheme) {
    case ContributionScheme::Complex: return "complex";
    case ContributionScheme::Quaternion: return "quaternion";
    case ContributionScheme::ShiftedIdentity: return "shifted-identity";
    case ContributionScheme::Uniform: return "uniform";
    }
    return "?";
}

ContributionScheme parse_contribution_scheme(std::string_view name) {
    if (name == "complex") return ContributionScheme::Complex;
    if (name == "quaternion") return ContributionScheme::Quaternion;
    if (name == "shifted-identity") return ContributionScheme::ShiftedIdentity;
    if (name == "uniform") return ContributionScheme::Uniform;
    fail(ErrorCode::InvalidArgument, fmt::format("unknown contribution scheme '{}'", name));
}

void ContributionSet::validate() const {
    require(n > 0, ErrorCode::InvalidArgument, "algebra dimension must be positive");
    require(matrices.size() == n, ErrorCode::ShapeMismatch,
            fmt::format("expected {} contribution matrices, got {}", n, matrices.size()));
    for (const auto& m : matrices) {
        require(m.rows() == n && m.cols() == n, ErrorCode::ShapeMismatch,
                fmt::format("contribution matrix must be {0}x{0}, got {1}x{2}", n, m.rows(), m.cols()));
        for (double v : m.data()) {
            require(std::isfinite(v), ErrorCode::NonFinite, "non-finite contribution entry");
        }
    }
}

Matrix kronecker(const Matrix& x, const Matrix& y) {
    const std::size_t p = y.rows(), q = y.cols();
    Matrix out(x.rows() * p, x.cols() * q);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j)
            for (std::size_t r = 0; r < p; ++r)
                for (std::size_t s = 0; s < q; ++s) out(i * p + r, j * q + s) = x(i, j) * y(r, s);
    return out;
}

namespace {

// Sign matrices read off the real block representation of the Hamilton
// product: C_t holds +-1 wherever component t's weight block appears.
ContributionSet complex_contributions() {
    return {2, {Matrix{{1, 0}, {0, 1}}, Matrix{{0, -1}, {1, 0}}}};
}

ContributionSet quaternion_contributions() {
    return {4,
            {Matrix{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}},
             Matrix{{0, -1, 0, 0}, {1, 0, 0, 0}, {0, 0, 0, -1}, {0, 0, 1, 0}},
             Matrix{{0, 0, -1, 0}, {0, 0, 0, 1}, {1, 0, 0, 0}, {0, -1, 0, 0}},
             Matrix{{0, 0, 0, -1}, {0, 0, -1, 0}, {0, 1, 0, 0}, {1, 0, 0, 0}}}};
}

ContributionSet shifted_identity_contributions(std::size_t n) {
    Matrix signs(n, n);
    for (std::size_t i = 0; i < n; ++i) signs(i, i) = i % 2 == 0 ? 1.0 : -1.0;
    Matrix shift(n, n);
    for (std::size_t i = 0; i < n; ++i) shift(i, (i + 1) % n) = 1.0;

    ContributionSet set{n, {}};
    Matrix power = Matrix::identity(n);
    for (std::size_t i = 0; i < n; ++i) {
        set.matrices.push_back(signs * power);
        power = power * shift;
    }
    return set;
}

ContributionSet uniform_contributions(std::size_t n, std::uint64_t seed, std::uint64_t layer_index) {
    ContributionSet set{n, {}};
    for (std::size_t i = 0; i < n; ++i) {
        const CounterRng rng(derive_key({seed, layer_index, i}));
        Matrix m(n, n);
        auto d = m.data();
        for (std::size_t e = 0; e < d.size(); ++e) d[e] = rng.uniform(e, -1.0, 1.0);
        set.matrices.push_back(std::move(m));
    }
    return set;
}

} // namespace

ContributionSet init_contributions(std::size_t n, ContributionScheme scheme, std::uint64_t seed,
                                   std::uint64_t layer_index) {
    require(n > 0, ErrorCode::InvalidArgument, "algebra dimension must be positive");
    switch (scheme) {
    case ContributionScheme::Complex:
        require(n == 2, ErrorCode::ShapeMismatch,
                fmt::format("complex contributions need n = 2, got n = {}", n));
        return complex_contributions();
    case ContributionScheme::Quaternion:
        require(n == 4, ErrorCode::ShapeMismatch,
                fmt::format("quaternion contributions need n = 4, got n = {}", n));
        return quaternion_contributions();
    case ContributionScheme::ShiftedIdentity: return shifted_identity_contributions(n);
    case ContributionScheme::Uniform: return uniform_contributions(n, seed, layer_index);
    }
    fail(ErrorCode::InvalidArgument, "unknown contribution scheme");
}

AssembledWeight assemble(const ContributionSet& c, std::span<const Matrix> weights) {
    c.validate();
    require(weights.size() == c.n, ErrorCode::ShapeMismatch,
            fmt::format("{} contribution matrices but {} weight matrices", c.n, weights.size()));
    const std::size_t r = weights[0].rows(), q = weights[0].cols();
    for (const auto& w : weights) {
        require(w.rows() == r && w.cols() == q, ErrorCode::ShapeMismatch,
                fmt::format("weight matrices disagree in shape: {}x{} vs {}x{}", w.rows(), w.cols(), r, q));
    }
    Matrix u(c.n * r, c.n * q);
    for (std::size_t i = 0; i < c.n; ++i) u = u + kronecker(c.matrices[i], weights[i]);
    return {std::move(u), c.n * r, c.n * q};
}

double sparsity(const Matrix& u) {
    require(u.rows() > 0 && u.cols() > 0, ErrorCode::ShapeMismatch, "sparsity of an empty matrix");
    double mass = 0.0;
    for (double v : u.data()) mass += std::fabs(v);
    return 1.0 - mass / static_cast<double>(u.rows() * u.cols());
}

std::size_t phm_param_count(std::size_t n, std::size_t k, std::size_t d, bool with_bias) {
    require(n > 0 && k % n == 0 && d % n == 0, ErrorCode::InvalidArgument,
            fmt::format("PHM sizes must be divisible by n: n={}, k={}, d={}", n, k, d));
    return k * d / n + n * n * n + (with_bias ? k : 0);
}

void write_csv(std::ostream& os, const Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) os << ',';
            os << fmt::format("{:.17g}", m(i, j));
        }
        os << '\n';
    }
}

std::size_t count_nonzero(const Matrix& m) {
    std::size_t nz = 0;
    for (double v : m.data()) nz += v != 0.0 ? 1 : 0;
    return nz;
}

} // namespace phc
