#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "phc/model.hpp"

namespace phc {

enum class TaskKind { Binary, MultilabelBinary, Multiclass, Regression };
enum class MetricKind { RocAuc, AveragePrecision, Accuracy, Mae };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);
std::string_view to_string(MetricKind kind);
MetricKind parse_metric_kind(std::string_view name);

MetricKind default_metric(TaskKind task);
bool higher_is_better(MetricKind metric);

struct TrainConfig {
    double lr = 1e-3;
    double lambda1 = 1e-2; // weight regularizer
    double lambda2 = 0.0;  // contribution sparsity
    double norm_p = 2.0;
    double plateau_factor = 0.5;
    std::size_t patience = 10;
    double min_lr = 1e-6;
    std::size_t max_epochs = 1000;
    double clip_norm = 0.0; // 0 disables clipping
    std::size_t batch_size = 128;
    std::size_t eval_batch_size = 512;
    TaskKind task = TaskKind::Regression;
    std::optional<MetricKind> metric; // empty: default_metric(task)
    /// Stop once the eval-mode train metric reaches this value (NaN: never).
    double stop_train_metric = std::numeric_limits<double>::quiet_NaN();

    MetricKind resolved_metric() const { return metric.value_or(default_metric(task)); }
    void validate() const;
};

// -- regularizers and loss --------------------------------------------------------

/// Mean over (a, b) of the l_p norm of W[., a, b] along the algebra axis.
Tensor weight_reg(const PhmLinear& layer, double p);
/// (1/n^3) * sum |C|.
Tensor contribution_reg(const PhmLinear& layer);
/// Sums of the two regularizers over a list of PHM layers (0 for an empty list).
Tensor weight_reg(std::span<const PhmLinear* const> layers, double p);
Tensor contribution_reg(std::span<const PhmLinear* const> layers);

/// Mean task loss. targets holds rows x target_dim values (NaN = missing);
/// for multiclass tasks each row holds one class index.
Tensor task_loss(const Tensor& logits, std::span<const double> targets, TaskKind task);

struct LossParts {
    Tensor total;
    double task = 0.0;
    double weight_reg = 0.0;
    double contribution_reg = 0.0;
};

/// task_loss + lambda1 * weight_reg + lambda2 * contribution_reg.
LossParts total_loss(const Tensor& logits, std::span<const double> targets, const PhcModel& model,
                     const TrainConfig& cfg);

// -- optimisation -----------------------------------------------------------------

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;
};

class Adam {
public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    Adam() = default;
    explicit Adam(TensorList params);

    const TensorList& params() const { return params_; }
    AdamState& state() { return state_; }
    const AdamState& state() const { return state_; }

    /// Clips the global gradient norm to clip_norm (when > 0) and applies one
    /// bias-corrected update. Missing grads count as zero. Returns the
    /// pre-clipping global norm.
    double step(double lr, double clip_norm = 0.0);
    void zero_grad();

private:
    TensorList params_;
    AdamState state_;
};

/// Global L2 norm of a gradient list.
double global_norm(std::span<const std::vector<double>> grads);

class PlateauScheduler {
public:
    PlateauScheduler() = default;
    PlateauScheduler(double lr, double factor, std::size_t patience, double min_lr, bool maximize);

    /// Feeds one validation value and returns the learning rate to use next.
    double step(double metric);

    double lr() const { return lr_; }
    bool should_stop() const { return lr_ < min_lr_; }

    // Raw state, for checkpoints.
    double best() const { return best_; }
    std::size_t bad_epochs() const { return bad_; }
    void restore(double lr, double best, std::size_t bad) {
        lr_ = lr;
        best_ = best;
        bad_ = bad;
    }

private:
    double lr_ = 1e-3;
    double factor_ = 0.5;
    std::size_t patience_ = 10;
    double min_lr_ = 1e-6;
    bool maximize_ = false;
    double best_ = std::numeric_limits<double>::quiet_NaN();
    std::size_t bad_ = 0;
};

// -- metrics ------------------------------------------------------------------------

/// Exact rank statistic; tied scores share their average rank. NaN labels are
/// skipped. NaN if only one class is present.
double roc_auc(std::span<const double> scores, std::span<const double> labels);
/// Step-wise average precision: sum over distinct thresholds of
/// (R_i - R_{i-1}) * P_i. NaN if there are no positives.
double average_precision(std::span<const double> scores, std::span<const double> labels);
double mean_absolute_error(std::span<const double> pred, std::span<const double> target);

/// Metric over rows x cols predictions. Binary-style metrics are averaged over
/// columns where they are defined; accuracy uses argmax for multiclass and
/// the sign of the logit otherwise.
double compute_metric(MetricKind metric, TaskKind task, std::span<const double> logits, std::size_t cols,
                      std::span<const double> targets);

/// Total count of trainable scalars.
std::size_t count_parameters(const PhcModel& model);

} // namespace phc
