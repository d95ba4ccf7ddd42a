// phc: train, evaluate, gradient-check and inspect PHC graph networks.

#include <cmath>
#ifdef __GLIBC__
#include <malloc.h>
#endif
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "phc/checkpoint.hpp"
#include "phc/config.hpp"
#include "phc/diagnostics.hpp"
#include "phc/trainer.hpp"

namespace {

using namespace phc;

// Tensor buffers of a few hundred KB are allocated and freed on every op;
// keep them on the heap instead of round-tripping through mmap.
void tune_allocator() {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("phc");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%H:%M:%S] %l: %v");
    const char* env = std::getenv("PHC_LOG");
    const auto level = env ? spdlog::level::from_str(env) : spdlog::level::info;
    spdlog::set_level(level);
}

int cmd_train(const std::string& config_path, const std::optional<std::uint64_t>& seed,
              const std::optional<std::string>& out, bool resume) {
    RunConfig cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out) cfg.output_dir = *out;
    const TrainRun run = train_from_config(cfg, resume);
    if (run.history.empty()) {
        fmt::print("no epochs run\n");
        return 0;
    }
    const auto& last = run.history.back();
    fmt::print("epochs={} stop={} best_epoch={} train_loss={:.17g} train_{}={:.17g} val_{}={:.17g}\n", last.epoch,
               run.stop_reason, run.best_epoch, last.train_loss, to_string(run.config.train.resolved_metric()),
               last.train_metric, to_string(run.config.train.resolved_metric()), last.val_metric);
    fmt::print("artifacts in {}\n", run.config.output_dir);
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path, const std::string& data_path,
             const std::string& split) {
    const RunConfig cfg = load_config(config_path);
    const Checkpoint ckpt = read_checkpoint(ckpt_path);
    LoadedModel loaded = load_model(ckpt);
    const Dataset data = load_jsonl(data_path);
    require(data.schema.features.node_vocab.size() == loaded.config.model.features.node_vocab.size() &&
                data.schema.features.node_cont_dim == loaded.config.model.features.node_cont_dim,
            ErrorCode::Schema, "dataset node features do not match the checkpoint");
    // Split membership follows the checkpoint's run (seed and fractions).
    const auto graphs = select_split(data, loaded.config, split);
    require(!graphs.empty(), ErrorCode::InvalidArgument, fmt::format("split '{}' is empty", split));
    TrainConfig tc = cfg.train;
    const EvalOutput out = evaluate(loaded.model, graphs, tc);
    fmt::print("graphs={}\n", graphs.size());
    std::vector<MetricKind> metrics;
    switch (tc.task) {
    case TaskKind::Regression: metrics = {MetricKind::Mae}; break;
    case TaskKind::Multiclass: metrics = {MetricKind::Accuracy}; break;
    default: metrics = {MetricKind::RocAuc, MetricKind::AveragePrecision, MetricKind::Accuracy}; break;
    }
    for (auto m : metrics) {
        fmt::print("{}={:.17g}\n", to_string(m), compute_metric(m, tc.task, out.logits, out.cols, out.targets));
    }
    return 0;
}

int cmd_gradcheck(const std::string& config_path, std::size_t coords) {
    const RunConfig cfg = load_config(config_path);
    const Graph g = bundled_graph();
    ModelConfig model = cfg.model;
    if (cfg.infer_out_dim) model.out_dim = 1;
    const auto result =
        check_model_gradients(model, cfg.train, cfg.seed, std::span(&g, 1), GradCheckOptions{1e-6, coords});
    const bool pass = result.max_rel_error < 1e-4;
    fmt::print("coords={} max rel err = {:.3e} < 1e-4: {}\n", result.coords_checked, result.max_rel_error,
               pass ? "PASS" : "FAIL");
    return pass ? 0 : 1;
}

int cmd_inspect(const std::string& ckpt_path, const std::string& out_dir) {
    const Checkpoint ckpt = read_checkpoint(ckpt_path);
    const LoadedModel loaded = load_model(ckpt);
    const auto reports = inspect_layers(loaded.model.state(), out_dir);
    fmt::print("layer,n,k,d,sparsity_U,nonzeros_C\n");
    for (const auto& r : reports) {
        fmt::print("{},{},{},{},{:.6f},{}\n", r.name, r.n, r.k, r.d, r.sparsity, fmt::join(r.nonzeros, " "));
    }
    return 0;
}

int cmd_gen(const std::string& kind, std::size_t size, std::uint64_t seed, const std::string& out_path) {
    const auto graphs = generate_synthetic(parse_synthetic_kind(kind), size, seed);
    std::ofstream out(out_path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, fmt::format("cannot write '{}'", out_path));
    write_jsonl(out, graphs);
    require(static_cast<bool>(out), ErrorCode::Io, fmt::format("error writing '{}'", out_path));
    fmt::print("wrote {} graphs to {}\n", graphs.size(), out_path);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"PHC graph neural networks"};
    app.require_subcommand(1);

    auto* train = app.add_subcommand("train", "train a model from a config file");
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    bool resume = false;
    train->add_option("--config", config_path, "run config")->required();
    train->add_option("--seed", seed, "override the config seed");
    train->add_option("--out", out_dir, "override output.dir");
    train->add_flag("--resume", resume, "continue from <out>/last.ckpt if present");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string ckpt_path, data_path, split = "all";
    eval->add_option("--config", config_path, "run config (task and metric)")->required();
    eval->add_option("--checkpoint", ckpt_path)->required();
    eval->add_option("--data", data_path)->required();
    eval->add_option("--split", split, "all, train, val or test")->check(CLI::IsMember({"all", "train", "val", "test"}));

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the configured model");
    std::size_t coords = 16;
    gradcheck->add_option("--config", config_path)->required();
    gradcheck->add_option("--coords", coords, "coordinates probed per tensor (0 = all)");

    auto* inspect = app.add_subcommand("inspect", "write per-layer U and C matrices as CSV");
    std::string inspect_out;
    inspect->add_option("--checkpoint", ckpt_path)->required();
    inspect->add_option("--out", inspect_out)->required();

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    std::string kind, gen_out;
    std::size_t size = 0;
    std::uint64_t gen_seed = 0;
    gen->add_option("--kind", kind, "ring-regression, triangle-count or component-parity")->required();
    gen->add_option("--size", size)->required();
    gen->add_option("--seed", gen_seed)->required();
    gen->add_option("--out", gen_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: usage: " << e.what() << "\n";
        return 64;
    }

    try {
        setup_logging();
        tune_allocator();
        if (*train) return cmd_train(config_path, seed, out_dir, resume);
        if (*eval) return cmd_eval(config_path, ckpt_path, data_path, split);
        if (*gradcheck) return cmd_gradcheck(config_path, coords);
        if (*inspect) return cmd_inspect(ckpt_path, inspect_out);
        if (*gen) return cmd_gen(kind, size, gen_seed, gen_out);
    } catch (const phc::Error& e) {
        std::cerr << "error: " << phc::to_string(e.code()) << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
