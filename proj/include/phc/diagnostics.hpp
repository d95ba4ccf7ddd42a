#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "phc/grad_check.hpp"
#include "phc/training.hpp"

namespace phc {

/// Fixed 8-node graph: one categorical node field (vocab 4), one categorical
/// edge field (vocab 3), 10 undirected edges, target {1.5}.
Graph bundled_graph();

/// Builds the model described by `model` (dropout forced to 0, features and
/// output width taken from the graphs) and grad-checks total_loss over every
/// trainable tensor in train mode. Targets are replaced by deterministic
/// values that fit the task.
GradCheckResult check_model_gradients(ModelConfig model, const TrainConfig& train, std::uint64_t seed,
                                      std::span<const Graph> graphs, const GradCheckOptions& options);

struct LayerReport {
    std::string name;
    std::size_t n = 0, k = 0, d = 0;
    double sparsity = 0.0;
    std::vector<std::size_t> nonzeros; // per C_i
};

/// Assembles U for every PHM layer found in `state` (entries X.C and X.W).
/// With a non-empty out_dir writes X.U.csv, X.C1.csv .. X.Cn.csv and
/// summary.csv there.
std::vector<LayerReport> inspect_layers(const TensorList& state, const std::string& out_dir);

} // namespace phc
