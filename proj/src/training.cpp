#include "phc/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace phc {

std::string_view to_string(TaskKind kind) {
    switch (kind) {
    case TaskKind::Binary: return "binary";
    case TaskKind::MultilabelBinary: return "multilabel-binary";
    case TaskKind::Multiclass: return "multiclass";
    case TaskKind::Regression: return "regression";
    }
    return "?";
}

TaskKind parse_task_kind(std::string_view name) {
    if (name == "binary") return TaskKind::Binary;
    if (name == "multilabel-binary") return TaskKind::MultilabelBinary;
    if (name == "multiclass") return TaskKind::Multiclass;
    if (name == "regression") return TaskKind::Regression;
    fail(ErrorCode::InvalidArgument, fmt::format("unknown task kind '{}'", name));
}

std::string_view to_string(MetricKind kind) {
    switch (kind) {
    case MetricKind::RocAuc: return "rocauc";
    case MetricKind::AveragePrecision: return "ap";
    case MetricKind::Accuracy: return "accuracy";
    case MetricKind::Mae: return "mae";
    }
    return "?";
}

MetricKind parse_metric_kind(std::string_view name) {
    if (name == "rocauc") return MetricKind::RocAuc;
    if (name == "ap") return MetricKind::AveragePrecision;
    if (name == "accuracy") return MetricKind::Accuracy;
    if (name == "mae") return MetricKind::Mae;
    fail(ErrorCode::InvalidArgument, fmt::format("unknown metric '{}'", name));
}

MetricKind default_metric(TaskKind task) {
    switch (task) {
    case TaskKind::Binary: return MetricKind::RocAuc;
    case TaskKind::MultilabelBinary: return MetricKind::AveragePrecision;
    case TaskKind::Multiclass: return MetricKind::Accuracy;
    case TaskKind::Regression: return MetricKind::Mae;
    }
    return MetricKind::Mae;
}

bool higher_is_better(MetricKind metric) { return metric != MetricKind::Mae; }

void TrainConfig::validate() const {
    require(lr > 0.0, ErrorCode::InvalidArgument, "train.lr must be positive");
    require(lambda1 >= 0.0 && lambda2 >= 0.0, ErrorCode::InvalidArgument, "train.lambda1 and train.lambda2 must be >= 0");
    require(norm_p >= 1.0, ErrorCode::InvalidArgument, "train.norm_p must be >= 1");
    require(plateau_factor > 0.0 && plateau_factor < 1.0, ErrorCode::InvalidArgument,
            "train.plateau_factor must lie in (0, 1)");
    require(patience >= 1, ErrorCode::InvalidArgument, "train.patience must be >= 1");
    require(min_lr >= 0.0, ErrorCode::InvalidArgument, "train.min_lr must be >= 0");
    require(max_epochs >= 1, ErrorCode::InvalidArgument, "train.max_epochs must be >= 1");
    require(clip_norm >= 0.0, ErrorCode::InvalidArgument, "train.clip_norm must be >= 0");
    require(batch_size >= 1 && eval_batch_size >= 1, ErrorCode::InvalidArgument, "batch sizes must be positive");
}

// -- regularizers and loss --------------------------------------------------------

Tensor weight_reg(const PhmLinear& layer, double p) { return ops::mean(ops::stack_lp_norm(layer.weights(), p)); }

Tensor contribution_reg(const PhmLinear& layer) {
    const auto n = static_cast<double>(layer.n());
    return ops::scale(ops::sum(ops::abs(layer.contributions())), 1.0 / (n * n * n));
}

Tensor weight_reg(std::span<const PhmLinear* const> layers, double p) {
    if (layers.empty()) return Tensor::scalar(0.0);
    std::vector<Tensor> terms;
    for (const auto* l : layers) terms.push_back(weight_reg(*l, p));
    return terms.size() == 1 ? terms[0] : ops::add_n(terms);
}

Tensor contribution_reg(std::span<const PhmLinear* const> layers) {
    if (layers.empty()) return Tensor::scalar(0.0);
    std::vector<Tensor> terms;
    for (const auto* l : layers) terms.push_back(contribution_reg(*l));
    return terms.size() == 1 ? terms[0] : ops::add_n(terms);
}

Tensor task_loss(const Tensor& logits, std::span<const double> targets, TaskKind task) {
    switch (task) {
    case TaskKind::Regression: return ops::mae_loss(logits, targets);
    case TaskKind::Binary:
    case TaskKind::MultilabelBinary: return ops::bce_with_logits(logits, targets);
    case TaskKind::Multiclass: {
        std::vector<std::int64_t> labels(targets.size());
        for (std::size_t i = 0; i < targets.size(); ++i) {
            require(!std::isnan(targets[i]) && targets[i] >= 0.0 && targets[i] == std::floor(targets[i]),
                    ErrorCode::InvalidArgument, fmt::format("multiclass target {} is not a class index", targets[i]));
            labels[i] = static_cast<std::int64_t>(targets[i]);
        }
        return ops::softmax_cross_entropy(logits, labels);
    }
    }
    fail(ErrorCode::InvalidArgument, "unknown task kind");
}

LossParts total_loss(const Tensor& logits, std::span<const double> targets, const PhcModel& model,
                     const TrainConfig& cfg) {
    LossParts parts;
    const auto layers = model.phm_layers();
    Tensor task = task_loss(logits, targets, cfg.task);
    Tensor wreg = weight_reg(layers, cfg.norm_p);
    Tensor creg = contribution_reg(layers);
    parts.task = task.item();
    parts.weight_reg = wreg.item();
    parts.contribution_reg = creg.item();
    std::vector<Tensor> terms{task};
    if (cfg.lambda1 > 0.0) terms.push_back(ops::scale(wreg, cfg.lambda1));
    if (cfg.lambda2 > 0.0) terms.push_back(ops::scale(creg, cfg.lambda2));
    parts.total = terms.size() == 1 ? terms[0] : ops::add_n(terms);
    return parts;
}

// -- Adam -------------------------------------------------------------------------

Adam::Adam(TensorList params) : params_(std::move(params)) {
    for (const auto& p : params_) {
        state_.m.emplace_back(p.tensor.numel(), 0.0);
        state_.v.emplace_back(p.tensor.numel(), 0.0);
    }
}

double global_norm(std::span<const std::vector<double>> grads) {
    double sq = 0.0;
    for (const auto& g : grads)
        for (double x : g) sq += x * x;
    return std::sqrt(sq);
}

double Adam::step(double lr, double clip_norm) {
    std::vector<std::vector<double>> grads;
    grads.reserve(params_.size());
    for (const auto& p : params_) {
        auto g = p.tensor.grad();
        if (g.empty()) grads.emplace_back(p.tensor.numel(), 0.0);
        else grads.emplace_back(g.begin(), g.end());
        const auto& last = grads.back();
        if (!std::all_of(last.begin(), last.end(), [](double x) { return std::isfinite(x); }))
            fail(ErrorCode::NonFinite, fmt::format("non-finite gradient in '{}'", p.name));
    }
    const double norm = global_norm(grads);
    const double factor = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double c1 = 1.0 - std::pow(kBeta1, t);
    const double c2 = 1.0 - std::pow(kBeta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto value = params_[i].tensor.mutable_data();
        auto& m = state_.m[i];
        auto& v = state_.v[i];
        for (std::size_t j = 0; j < value.size(); ++j) {
            const double g = grads[i][j] * factor;
            m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g;
            v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g * g;
            value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + kEps);
        }
    }
    return norm;
}

void Adam::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

// -- PlateauScheduler -------------------------------------------------------------------

PlateauScheduler::PlateauScheduler(double lr, double factor, std::size_t patience, double min_lr, bool maximize)
    : lr_(lr), factor_(factor), patience_(patience), min_lr_(min_lr), maximize_(maximize) {}

double PlateauScheduler::step(double metric) {
    const bool improved =
        std::isnan(best_) || (!std::isnan(metric) && (maximize_ ? metric > best_ : metric < best_));
    if (improved && !std::isnan(metric)) {
        best_ = metric;
        bad_ = 0;
    } else if (++bad_ >= patience_) {
        lr_ *= factor_;
        bad_ = 0;
    }
    return lr_;
}

// -- metrics ------------------------------------------------------------------------------

double roc_auc(std::span<const double> scores, std::span<const double> labels) {
    require(scores.size() == labels.size(), ErrorCode::ShapeMismatch, "roc_auc: scores and labels differ in length");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (!std::isnan(labels[i])) idx.push_back(i);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos = 0.0, rank_sum = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j); // ranks i+1 .. j
        for (std::size_t r = i; r < j; ++r) {
            if (labels[idx[r]] > 0.5) {
                pos += 1.0;
                rank_sum += avg_rank;
            }
        }
        i = j;
    }
    const double neg = static_cast<double>(idx.size()) - pos;
    if (pos == 0.0 || neg == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double average_precision(std::span<const double> scores, std::span<const double> labels) {
    require(scores.size() == labels.size(), ErrorCode::ShapeMismatch,
            "average_precision: scores and labels differ in length");
    std::vector<std::size_t> idx;
    double total_pos = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (std::isnan(labels[i])) continue;
        idx.push_back(i);
        if (labels[i] > 0.5) total_pos += 1.0;
    }
    if (total_pos == 0.0) return std::numeric_limits<double>::quiet_NaN();
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double tp = 0.0, fp = 0.0, prev_recall = 0.0, ap = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            if (labels[idx[j]] > 0.5) tp += 1.0;
            else fp += 1.0;
            ++j;
        }
        const double recall = tp / total_pos;
        ap += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
        i = j;
    }
    return ap;
}

double mean_absolute_error(std::span<const double> pred, std::span<const double> target) {
    require(pred.size() == target.size(), ErrorCode::ShapeMismatch, "mae: predictions and targets differ in length");
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (std::isnan(target[i])) continue;
        acc += std::fabs(pred[i] - target[i]);
        ++count;
    }
    return count == 0 ? std::numeric_limits<double>::quiet_NaN() : acc / static_cast<double>(count);
}

double compute_metric(MetricKind metric, TaskKind task, std::span<const double> logits, std::size_t cols,
                      std::span<const double> targets) {
    require(cols > 0 && logits.size() % cols == 0, ErrorCode::ShapeMismatch, "metric: bad logit layout");
    const std::size_t rows = logits.size() / cols;
    if (metric == MetricKind::Mae) return mean_absolute_error(logits, targets);
    if (metric == MetricKind::Accuracy) {
        std::size_t correct = 0, total = 0;
        if (task == TaskKind::Multiclass) {
            require(targets.size() == rows, ErrorCode::ShapeMismatch, "accuracy: one label per row expected");
            for (std::size_t r = 0; r < rows; ++r) {
                const auto row = logits.subspan(r * cols, cols);
                const auto best = static_cast<double>(std::max_element(row.begin(), row.end()) - row.begin());
                correct += best == targets[r] ? 1 : 0;
                ++total;
            }
        } else {
            require(targets.size() == logits.size(), ErrorCode::ShapeMismatch, "accuracy: target layout mismatch");
            for (std::size_t i = 0; i < logits.size(); ++i) {
                if (std::isnan(targets[i])) continue;
                correct += (logits[i] > 0.0) == (targets[i] > 0.5) ? 1 : 0;
                ++total;
            }
        }
        return total == 0 ? std::numeric_limits<double>::quiet_NaN()
                          : static_cast<double>(correct) / static_cast<double>(total);
    }
    require(targets.size() == logits.size(), ErrorCode::ShapeMismatch, "metric: target layout mismatch");
    double acc = 0.0;
    std::size_t defined = 0;
    std::vector<double> s(rows), y(rows);
    for (std::size_t c = 0; c < cols; ++c) {
        for (std::size_t r = 0; r < rows; ++r) {
            s[r] = logits[r * cols + c];
            y[r] = targets[r * cols + c];
        }
        const double v = metric == MetricKind::RocAuc ? roc_auc(s, y) : average_precision(s, y);
        if (!std::isnan(v)) {
            acc += v;
            ++defined;
        }
    }
    return defined == 0 ? std::numeric_limits<double>::quiet_NaN() : acc / static_cast<double>(defined);
}

std::size_t count_parameters(const PhcModel& model) { return model.count_parameters(); }

} // namespace phc
