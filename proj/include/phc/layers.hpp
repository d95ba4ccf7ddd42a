#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "phc/algebra.hpp"
#include "phc/ops.hpp"
#include "phc/random.hpp"
#include "phc/tensor.hpp"

namespace phc {

enum class Mode { Train, Eval };

enum class ParamKind {
    PhmWeight,    // W_i stacks, penalised by the algebra-axis weight regulariser
    Contribution, // C_i stacks, penalised by the l1 sparsity regulariser
    Other,        // biases, embeddings, dense layers, batchnorm scale/shift, tau
    Buffer,       // non-trainable state (running statistics)
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
    ParamKind kind = ParamKind::Other;
};

using TensorList = std::vector<NamedTensor>;

/// Trainable iff the tensor takes part in differentiation.
inline bool is_trainable(const NamedTensor& t) {
    return t.kind != ParamKind::Buffer && t.tensor.requires_grad();
}

// ---------------------------------------------------------------------------

enum class WeightInit { PhcNormal, Glorot, He };

std::string_view to_string(WeightInit init);
WeightInit parse_weight_init(std::string_view name);

/// sqrt(2 / (n (d + k))): the per-entry standard deviation of the
/// phc-normal scheme for an n-component layer mapping d -> k features.
double phc_normal_sigma(std::size_t n, std::size_t k, std::size_t d);

/// Affine layer y = U x + b with U = sum_i C_i (x) W_i.
///
/// Parameters are stored as stacks: contributions (n, n, n) and weights
/// (n, k/n, d/n). The bias, when present, has one entry per output.
class PhmLinear {
public:
    PhmLinear() = default;
    PhmLinear(const ContributionSet& contributions, std::span<const Matrix> weights, bool with_bias,
              bool freeze_contributions = false);

    std::size_t n() const { return n_; }
    std::size_t in_features() const { return d_; }
    std::size_t out_features() const { return k_; }
    bool has_bias() const { return bias_.defined(); }
    bool contributions_frozen() const { return !contributions_.requires_grad(); }

    /// x: (b, d) -> (b, k)
    Tensor forward(const Tensor& x) const;
    /// Differentiable U.
    Tensor assembled() const;

    ContributionSet contribution_set() const;
    std::vector<Matrix> weight_matrices() const;

    Tensor& contributions() { return contributions_; }
    Tensor& weights() { return weights_; }
    Tensor& bias() { return bias_; }
    const Tensor& contributions() const { return contributions_; }
    const Tensor& weights() const { return weights_; }
    const Tensor& bias() const { return bias_; }

    std::size_t num_trainable() const;
    void collect(TensorList& out, const std::string& prefix) const;

private:
    std::size_t n_ = 0, k_ = 0, d_ = 0;
    Tensor contributions_;
    Tensor weights_;
    Tensor bias_;
};

struct PhmInit {
    WeightInit weights = WeightInit::PhcNormal;
    ContributionScheme contributions = ContributionScheme::ShiftedIdentity;
    bool with_bias = true;
    bool freeze_contributions = false;
};

/// Builds a PHM layer mapping d -> k. Each W_i is drawn separately; the bias
/// starts at zero. `layer_index` keys the random streams so layers differ.
PhmLinear init_phm(std::size_t n, std::size_t k, std::size_t d, const PhmInit& init,
                   std::uint64_t seed, std::uint64_t layer_index = 0);

// ---------------------------------------------------------------------------

/// Plain dense affine map y = x A + b; A is (in, out). Serves as the real
/// transform that collapses the algebra axis and as the continuous-feature
/// encoder.
class Dense {
public:
    Dense() = default;
    Dense(Tensor weight, Tensor bias);
    static Dense glorot(std::size_t in, std::size_t out, Rng& rng);
    static Dense zeros(std::size_t in, std::size_t out);

    std::size_t in_features() const { return weight_.dim(0); }
    std::size_t out_features() const { return weight_.dim(1); }
    Tensor forward(const Tensor& x) const;

    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }
    const Tensor& weight() const { return weight_; }
    const Tensor& bias() const { return bias_; }

    std::size_t num_trainable() const;
    void collect(TensorList& out, const std::string& prefix) const;

private:
    Tensor weight_;
    Tensor bias_;
};

/// H (b, n m) -> H A_r + b_r.
Tensor real_transform(const Tensor& h, const Tensor& a_r, const Tensor& b_r);

// ---------------------------------------------------------------------------

/// Standard batch normalisation applied independently to each
/// (component, channel) pair of a (b, n, m) embedding.
class ComponentBatchNorm {
public:
    static constexpr double kDefaultMomentum = 0.1;
    static constexpr double kDefaultEps = 1e-5;

    ComponentBatchNorm() = default;
    ComponentBatchNorm(std::size_t n, std::size_t m, double momentum = kDefaultMomentum,
                       double eps = kDefaultEps);

    /// Accepts (b, n, m) or the flattened (b, n m); returns the same shape.
    /// Train mode needs b >= 2 and updates the running statistics.
    Tensor forward(const Tensor& h, Mode mode);

    std::size_t n() const { return n_; }
    std::size_t m() const { return m_; }
    double momentum() const { return momentum_; }
    double eps() const { return eps_; }

    Tensor& gamma() { return gamma_; }
    Tensor& beta() { return beta_; }
    const Tensor& running_mean() const { return running_mean_; }
    const Tensor& running_var() const { return running_var_; }

    std::size_t num_trainable() const { return 2 * n_ * m_; }
    void collect(TensorList& out, const std::string& prefix) const;

private:
    std::size_t n_ = 0, m_ = 0;
    double momentum_ = kDefaultMomentum;
    double eps_ = kDefaultEps;
    Tensor gamma_, beta_;
    Tensor running_mean_, running_var_;
};

// ---------------------------------------------------------------------------

enum class DropoutMode {
    Component, // one Bernoulli draw per (row, channel), shared by all n components
    Flat,      // one draw per scalar
};

std::string_view to_string(DropoutMode mode);
DropoutMode parse_dropout_mode(std::string_view name);

/// Inverted dropout on a (b, n, m) tensor. Eval mode and p = 0 return the
/// input unchanged.
Tensor hc_dropout(const Tensor& h, double p, DropoutMode mode, Mode phase, Rng& rng);

} // namespace phc
