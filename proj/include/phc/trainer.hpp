#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "phc/checkpoint.hpp"
#include "phc/config.hpp"

namespace phc {

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double train_metric = 0.0; // eval mode, after the epoch's updates
    double val_metric = 0.0;
    double lr = 0.0;
    double weight_reg = 0.0;
    double contribution_reg = 0.0;
    double seconds = 0.0;
};

struct EvalOutput {
    std::vector<double> logits; // rows x cols
    std::size_t cols = 0;
    std::vector<double> targets;
    double metric = 0.0;
};

/// Eval-mode predictions over graphs in order, in batches of
/// cfg.eval_batch_size, without recording a graph.
EvalOutput evaluate(PhcModel& model, std::span<const Graph* const> graphs, const TrainConfig& cfg);

std::string log_header();
std::string log_row(const EpochRecord& r);

class Trainer {
public:
    /// `cfg` must already be resolved against the data.
    Trainer(RunConfig cfg, std::vector<Graph> train, std::vector<Graph> val);

    PhcModel& model() { return model_; }
    const RunConfig& config() const { return cfg_; }
    const std::vector<EpochRecord>& history() const { return history_; }
    double lr() const { return scheduler_.lr(); }
    bool finished() const { return finished_; }
    const std::string& stop_reason() const { return stop_reason_; }
    std::size_t best_epoch() const { return best_epoch_; }

    /// One pass over the shuffled training split plus bookkeeping.
    EpochRecord run_epoch();

    /// Runs epochs until a stop rule fires or `epoch_limit` (0: none) more
    /// epochs have run. With a non-empty output_dir, writes log.csv,
    /// config.txt, last.ckpt after every epoch and best.ckpt on improvement.
    void fit(const std::string& output_dir, std::size_t epoch_limit = 0,
             const std::function<void(const EpochRecord&)>& on_epoch = {});

    Checkpoint snapshot() const;
    /// Restores model, optimizer, scheduler and history from a snapshot.
    void restore(const Checkpoint& ckpt);

private:
    std::vector<const Graph*> pointers(const std::vector<Graph>& graphs) const;

    RunConfig cfg_;
    std::vector<Graph> train_;
    std::vector<Graph> val_;
    PhcModel model_;
    Adam optimizer_;
    PlateauScheduler scheduler_;
    std::vector<EpochRecord> history_;
    double best_val_;
    std::size_t best_epoch_ = 0;
    bool finished_ = false;
    std::string stop_reason_;
};

/// Model rebuilt from a checkpoint's embedded config, with stored values.
struct LoadedModel {
    RunConfig config;
    PhcModel model;
};
LoadedModel load_model(const Checkpoint& ckpt);

/// Loads data, splits it, resolves the config and trains. With resume set and
/// an existing <output_dir>/last.ckpt, continues from it.
struct TrainRun {
    RunConfig config;
    std::vector<EpochRecord> history;
    std::string stop_reason;
    std::size_t best_epoch = 0;
};
TrainRun train_from_config(RunConfig cfg, bool resume);

/// Graphs of a dataset selected by split name: all, train, val or test.
std::vector<const Graph*> select_split(const Dataset& data, const RunConfig& cfg, std::string_view split);

} // namespace phc
