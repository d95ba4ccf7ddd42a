#include "phc/layers.hpp"

#include <cmath>

#include <fmt/format.h>

namespace phc {

std::string_view to_string(WeightInit init) {
    switch (init) {
    case WeightInit::PhcNormal: return "phc-normal";
    case WeightInit::Glorot: return "glorot";
    case WeightInit::He: return "he";
    }
    return "?";
}

WeightInit parse_weight_init(std::string_view name) {
    if (name == "phc-normal") return WeightInit::PhcNormal;
    if (name == "glorot") return WeightInit::Glorot;
    if (name == "he") return WeightInit::He;
    fail(ErrorCode::InvalidArgument, fmt::format("unknown weight init '{}'", name));
}

double phc_normal_sigma(std::size_t n, std::size_t k, std::size_t d) {
    return std::sqrt(2.0 / (static_cast<double>(n) * static_cast<double>(d + k)));
}

// -- PhmLinear ---------------------------------------------------------------

PhmLinear::PhmLinear(const ContributionSet& contributions, std::span<const Matrix> weights,
                     bool with_bias, bool freeze_contributions) {
    contributions.validate();
    const std::size_t n = contributions.n;
    require(weights.size() == n, ErrorCode::ShapeMismatch,
            fmt::format("PHM layer with n={} got {} weight matrices", n, weights.size()));
    const std::size_t r = weights[0].rows(), c = weights[0].cols();
    require(r > 0 && c > 0, ErrorCode::ShapeMismatch, "PHM weight matrices must be non-empty");
    std::vector<double> cdata, wdata;
    cdata.reserve(n * n * n);
    wdata.reserve(n * r * c);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& w = weights[i];
        require(w.rows() == r && w.cols() == c, ErrorCode::ShapeMismatch,
                "PHM weight matrices disagree in shape");
        cdata.insert(cdata.end(), contributions.matrices[i].data().begin(),
                     contributions.matrices[i].data().end());
        wdata.insert(wdata.end(), w.data().begin(), w.data().end());
    }
    n_ = n;
    k_ = n * r;
    d_ = n * c;
    contributions_ = Tensor::from({n, n, n}, std::move(cdata), !freeze_contributions);
    weights_ = Tensor::from({n, r, c}, std::move(wdata), true);
    if (with_bias) bias_ = Tensor::zeros({k_}, true);
}

Tensor PhmLinear::assembled() const { return ops::kron_sum(contributions_, weights_); }

Tensor PhmLinear::forward(const Tensor& x) const {
    require(x.rank() == 2 && x.dim(1) == d_, ErrorCode::ShapeMismatch,
            fmt::format("PHM layer expects input width {}, got shape {}", d_, shape_to_string(x.shape())));
    Tensor y = ops::matmul_nt(x, assembled());
    return bias_.defined() ? ops::add_bias(y, bias_) : y;
}

ContributionSet PhmLinear::contribution_set() const {
    ContributionSet set{n_, {}};
    const auto v = contributions_.data();
    for (std::size_t i = 0; i < n_; ++i) {
        set.matrices.emplace_back(n_, n_, std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(i * n_ * n_),
                                                              v.begin() + static_cast<std::ptrdiff_t>((i + 1) * n_ * n_)));
    }
    return set;
}

std::vector<Matrix> PhmLinear::weight_matrices() const {
    const std::size_t r = k_ / n_, c = d_ / n_;
    std::vector<Matrix> out;
    const auto v = weights_.data();
    for (std::size_t i = 0; i < n_; ++i) {
        out.emplace_back(r, c, std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(i * r * c),
                                                   v.begin() + static_cast<std::ptrdiff_t>((i + 1) * r * c)));
    }
    return out;
}

std::size_t PhmLinear::num_trainable() const {
    std::size_t count = weights_.numel();
    if (!contributions_frozen()) count += contributions_.numel();
    if (bias_.defined()) count += bias_.numel();
    return count;
}

void PhmLinear::collect(TensorList& out, const std::string& prefix) const {
    out.push_back({prefix + ".C", contributions_, ParamKind::Contribution});
    out.push_back({prefix + ".W", weights_, ParamKind::PhmWeight});
    if (bias_.defined()) out.push_back({prefix + ".b", bias_, ParamKind::Other});
}

PhmLinear init_phm(std::size_t n, std::size_t k, std::size_t d, const PhmInit& init, std::uint64_t seed,
                   std::uint64_t layer_index) {
    require(n > 0 && k % n == 0 && d % n == 0 && k > 0 && d > 0, ErrorCode::InvalidArgument,
            fmt::format("PHM sizes must be positive multiples of n: n={}, k={}, d={}", n, k, d));
    const std::size_t r = k / n, c = d / n;
    double sigma = 0.0;
    switch (init.weights) {
    case WeightInit::PhcNormal: sigma = phc_normal_sigma(n, k, d); break;
    case WeightInit::Glorot: sigma = std::sqrt(2.0 / static_cast<double>(r + c)); break;
    case WeightInit::He: sigma = std::sqrt(2.0 / static_cast<double>(c)); break;
    }
    Rng rng = make_rng({seed, layer_index, 0x5748ULL});
    std::normal_distribution<double> normal(0.0, sigma);
    std::vector<Matrix> weights;
    for (std::size_t i = 0; i < n; ++i) {
        Matrix w(r, c);
        for (auto& v : w.data()) v = normal(rng);
        weights.push_back(std::move(w));
    }
    auto contributions = init_contributions(n, init.contributions, seed, layer_index);
    return PhmLinear(contributions, weights, init.with_bias, init.freeze_contributions);
}

// -- Dense -------------------------------------------------------------------

Dense::Dense(Tensor weight, Tensor bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
    require(weight_.rank() == 2 && bias_.numel() == weight_.dim(1), ErrorCode::ShapeMismatch,
            "dense layer needs weight (in, out) and bias (out)");
}

Dense Dense::glorot(std::size_t in, std::size_t out, Rng& rng) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in + out)));
    std::vector<double> w(in * out);
    for (auto& v : w) v = normal(rng);
    return Dense(Tensor::from({in, out}, std::move(w), true), Tensor::zeros({out}, true));
}

Dense Dense::zeros(std::size_t in, std::size_t out) {
    return Dense(Tensor::zeros({in, out}, true), Tensor::zeros({out}, true));
}

Tensor Dense::forward(const Tensor& x) const { return real_transform(x, weight_, bias_); }

std::size_t Dense::num_trainable() const { return weight_.defined() ? weight_.numel() + bias_.numel() : 0; }

void Dense::collect(TensorList& out, const std::string& prefix) const {
    if (!weight_.defined()) return;
    out.push_back({prefix + ".A", weight_, ParamKind::Other});
    out.push_back({prefix + ".b", bias_, ParamKind::Other});
}

Tensor real_transform(const Tensor& h, const Tensor& a_r, const Tensor& b_r) {
    require(h.rank() == 2 && a_r.rank() == 2 && h.dim(1) == a_r.dim(0), ErrorCode::ShapeMismatch,
            fmt::format("real transform: input {} against weight {}", shape_to_string(h.shape()),
                        shape_to_string(a_r.shape())));
    return ops::add_bias(ops::matmul(h, a_r), b_r);
}

// -- ComponentBatchNorm -----------------------------------------------------

ComponentBatchNorm::ComponentBatchNorm(std::size_t n, std::size_t m, double momentum, double eps)
    : n_(n), m_(m), momentum_(momentum), eps_(eps) {
    require(n > 0 && m > 0, ErrorCode::InvalidArgument, "batchnorm needs positive n and m");
    require(eps > 0.0, ErrorCode::InvalidArgument, "batchnorm epsilon must be positive");
    require(momentum >= 0.0 && momentum <= 1.0, ErrorCode::InvalidArgument, "batchnorm momentum must lie in [0, 1]");
    gamma_ = Tensor::full({n * m}, 1.0, true);
    beta_ = Tensor::zeros({n * m}, true);
    running_mean_ = Tensor::zeros({n * m});
    running_var_ = Tensor::full({n * m}, 1.0);
}

Tensor ComponentBatchNorm::forward(const Tensor& h, Mode mode) {
    const bool is_3d = h.rank() == 3;
    require((is_3d && h.dim(1) == n_ && h.dim(2) == m_) || (h.rank() == 2 && h.dim(1) == n_ * m_),
            ErrorCode::ShapeMismatch,
            fmt::format("batchnorm over ({}, {}) got input {}", n_, m_, shape_to_string(h.shape())));
    const std::size_t b = h.dim(0);
    Tensor flat = is_3d ? ops::reshape(h, {b, n_ * m_}) : h;
    Tensor out;
    if (mode == Mode::Train) {
        require(b >= 2, ErrorCode::InvalidArgument, "batchnorm in train mode needs at least 2 rows");
        ops::BatchMoments moments;
        out = ops::batch_norm_train(flat, gamma_, beta_, eps_, &moments);
        auto rm = running_mean_.mutable_data();
        auto rv = running_var_.mutable_data();
        const double unbias = static_cast<double>(b) / static_cast<double>(b - 1);
        for (std::size_t j = 0; j < rm.size(); ++j) {
            rm[j] = (1.0 - momentum_) * rm[j] + momentum_ * moments.mean[j];
            rv[j] = (1.0 - momentum_) * rv[j] + momentum_ * moments.var[j] * unbias;
        }
    } else {
        out = ops::batch_norm_eval(flat, gamma_, beta_, running_mean_.data(), running_var_.data(), eps_);
    }
    return is_3d ? ops::reshape(out, {b, n_, m_}) : out;
}

void ComponentBatchNorm::collect(TensorList& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma_, ParamKind::Other});
    out.push_back({prefix + ".beta", beta_, ParamKind::Other});
    out.push_back({prefix + ".running_mean", running_mean_, ParamKind::Buffer});
    out.push_back({prefix + ".running_var", running_var_, ParamKind::Buffer});
}

// -- dropout -------------------------------------------------------------------

std::string_view to_string(DropoutMode mode) {
    return mode == DropoutMode::Component ? "component" : "flat";
}

DropoutMode parse_dropout_mode(std::string_view name) {
    if (name == "component") return DropoutMode::Component;
    if (name == "flat") return DropoutMode::Flat;
    fail(ErrorCode::InvalidArgument, fmt::format("unknown dropout mode '{}'", name));
}

Tensor hc_dropout(const Tensor& h, double p, DropoutMode mode, Mode phase, Rng& rng) {
    require(p >= 0.0 && p < 1.0, ErrorCode::InvalidArgument,
            fmt::format("dropout probability must lie in [0, 1), got {}", p));
    require(h.rank() == 3, ErrorCode::ShapeMismatch,
            "hc_dropout expects a (b, n, m) tensor, got " + shape_to_string(h.shape()));
    if (phase == Mode::Eval || p == 0.0) return h;
    const std::size_t b = h.dim(0), n = h.dim(1), m = h.dim(2);
    const double keep_scale = 1.0 / (1.0 - p);
    std::bernoulli_distribution keep(1.0 - p);
    std::vector<double> mask(b * n * m);
    if (mode == DropoutMode::Component) {
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const double v = keep(rng) ? keep_scale : 0.0;
                for (std::size_t c = 0; c < n; ++c) mask[(i * n + c) * m + j] = v;
            }
    } else {
        for (auto& v : mask) v = keep(rng) ? keep_scale : 0.0;
    }
    return ops::mul(h, Tensor::from(h.shape(), std::move(mask)));
}

} // namespace phc
