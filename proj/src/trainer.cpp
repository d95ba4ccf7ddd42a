#include "phc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace phc {

namespace {

constexpr std::uint64_t kEpochStream = 0x45504f43ULL;
constexpr std::size_t kHistoryCols = 8;

bool better(double candidate, double incumbent, bool maximize) {
    if (std::isnan(candidate)) return false;
    if (std::isnan(incumbent)) return true;
    return maximize ? candidate > incumbent : candidate < incumbent;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, fmt::format("cannot write '{}'", path.string()));
    out << text;
}

} // namespace

EvalOutput evaluate(PhcModel& model, std::span<const Graph* const> graphs, const TrainConfig& cfg) {
    NoGradGuard no_grad;
    EvalOutput out;
    ForwardContext ctx{Mode::Eval, nullptr};
    for (std::size_t start = 0; start < graphs.size(); start += cfg.eval_batch_size) {
        const auto end = std::min(graphs.size(), start + cfg.eval_batch_size);
        const GraphBatch batch = collate(graphs.subspan(start, end - start));
        const Tensor logits = model.forward(batch, ctx);
        out.cols = logits.dim(1);
        const auto v = logits.data();
        out.logits.insert(out.logits.end(), v.begin(), v.end());
        out.targets.insert(out.targets.end(), batch.targets.begin(), batch.targets.end());
    }
    out.metric = graphs.empty() ? std::numeric_limits<double>::quiet_NaN()
                                : compute_metric(cfg.resolved_metric(), cfg.task, out.logits, out.cols, out.targets);
    return out;
}

std::string log_header() {
    return "epoch,train_loss,train_metric,val_metric,lr,weight_reg,contribution_reg,seconds";
}

std::string log_row(const EpochRecord& r) {
    return fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.3f}", r.epoch, r.train_loss,
                       r.train_metric, r.val_metric, r.lr, r.weight_reg, r.contribution_reg, r.seconds);
}

Trainer::Trainer(RunConfig cfg, std::vector<Graph> train, std::vector<Graph> val)
    : cfg_(std::move(cfg)), train_(std::move(train)), val_(std::move(val)), model_(cfg_.model, cfg_.seed),
      optimizer_(model_.parameters()),
      scheduler_(cfg_.train.lr, cfg_.train.plateau_factor, cfg_.train.patience, cfg_.train.min_lr,
                 higher_is_better(cfg_.train.resolved_metric())),
      best_val_(std::numeric_limits<double>::quiet_NaN()) {
    cfg_.validate();
    require(!train_.empty(), ErrorCode::InvalidArgument, "training split is empty");
}

std::vector<const Graph*> Trainer::pointers(const std::vector<Graph>& graphs) const {
    std::vector<const Graph*> out;
    out.reserve(graphs.size());
    for (const auto& g : graphs) out.push_back(&g);
    return out;
}

EpochRecord Trainer::run_epoch() {
    require(!finished_, ErrorCode::InvalidArgument, "training already finished");
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = history_.size() + 1;
    rec.lr = scheduler_.lr();
    const auto& tc = cfg_.train;

    Rng rng = make_rng({cfg_.seed, kEpochStream, rec.epoch});
    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::vector<const Graph*> members;
    for (std::size_t start = 0; start < order.size();) {
        auto end = std::min(order.size(), start + tc.batch_size);
        // A lone trailing graph joins the previous batch so batch statistics stay defined.
        if (order.size() - end == 1) end = order.size();
        members.clear();
        for (std::size_t i = start; i < end; ++i) members.push_back(&train_[order[i]]);
        const GraphBatch batch = collate(members);
        ForwardContext ctx{Mode::Train, &rng};
        const Tensor logits = model_.forward(batch, ctx);
        const LossParts parts = total_loss(logits, batch.targets, model_, tc);
        optimizer_.zero_grad();
        parts.total.backward();
        optimizer_.step(rec.lr, tc.clip_norm);
        loss_sum += parts.total.item() * static_cast<double>(members.size());
        start = end;
    }
    rec.train_loss = loss_sum / static_cast<double>(train_.size());

    rec.train_metric = evaluate(model_, pointers(train_), tc).metric;
    rec.val_metric = val_.empty() ? std::numeric_limits<double>::quiet_NaN()
                                  : evaluate(model_, pointers(val_), tc).metric;
    {
        NoGradGuard no_grad;
        const auto layers = model_.phm_layers();
        rec.weight_reg = weight_reg(layers, tc.norm_p).item();
        rec.contribution_reg = contribution_reg(layers).item();
    }

    const bool maximize = higher_is_better(tc.resolved_metric());
    const double monitored = val_.empty() ? rec.train_metric : rec.val_metric;
    if (better(monitored, best_val_, maximize)) {
        best_val_ = monitored;
        best_epoch_ = rec.epoch;
    }
    scheduler_.step(monitored);

    if (!std::isnan(tc.stop_train_metric) &&
        (maximize ? rec.train_metric >= tc.stop_train_metric : rec.train_metric <= tc.stop_train_metric)) {
        finished_ = true;
        stop_reason_ = "target_reached";
    } else if (scheduler_.should_stop()) {
        finished_ = true;
        stop_reason_ = "min_lr";
    } else if (rec.epoch >= tc.max_epochs) {
        finished_ = true;
        stop_reason_ = "max_epochs";
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history_.push_back(rec);
    spdlog::info("epoch {} loss {:.6f} train {:.6f} val {:.6f} lr {:.3g}", rec.epoch, rec.train_loss,
                 rec.train_metric, rec.val_metric, rec.lr);
    return rec;
}

void Trainer::fit(const std::string& output_dir, std::size_t epoch_limit,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
    const std::filesystem::path dir(output_dir);
    if (!output_dir.empty()) {
        std::filesystem::create_directories(dir);
        write_text(dir / "config.txt", serialize_config(cfg_));
    }
    for (std::size_t ran = 0; !finished_ && (epoch_limit == 0 || ran < epoch_limit); ++ran) {
        const EpochRecord rec = run_epoch();
        if (!output_dir.empty()) {
            std::string log = log_header() + "\n";
            for (const auto& r : history_) log += log_row(r) + "\n";
            write_text(dir / "log.csv", log);
            const Checkpoint ckpt = snapshot();
            write_checkpoint((dir / "last.ckpt").string(), ckpt);
            if (best_epoch_ == rec.epoch) write_checkpoint((dir / "best.ckpt").string(), ckpt);
        }
        if (on_epoch) on_epoch(rec);
    }
}

Checkpoint Trainer::snapshot() const {
    Checkpoint ckpt;
    ckpt.config_text = serialize_config(cfg_);
    ckpt.put_state(model_.state());
    const auto& params = optimizer_.params();
    const auto& st = optimizer_.state();
    for (std::size_t i = 0; i < params.size(); ++i) {
        ckpt.put("adam.m." + params[i].name, params[i].tensor.shape(), st.m[i]);
        ckpt.put("adam.v." + params[i].name, params[i].tensor.shape(), st.v[i]);
    }
    ckpt.put_scalar("adam.step", static_cast<double>(st.step));
    ckpt.put_scalar("sched.lr", scheduler_.lr());
    ckpt.put_scalar("sched.best", scheduler_.best());
    ckpt.put_scalar("sched.bad", static_cast<double>(scheduler_.bad_epochs()));
    ckpt.put_scalar("trainer.best_val", best_val_);
    ckpt.put_scalar("trainer.best_epoch", static_cast<double>(best_epoch_));
    ckpt.put_scalar("trainer.finished", finished_ ? 1.0 : 0.0);
    if (!history_.empty()) {
        std::vector<double> rows;
        for (const auto& r : history_) {
            rows.insert(rows.end(), {static_cast<double>(r.epoch), r.train_loss, r.train_metric, r.val_metric, r.lr,
                                     r.weight_reg, r.contribution_reg, r.seconds});
        }
        ckpt.put("trainer.history", {history_.size(), kHistoryCols}, std::move(rows));
    }
    return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
    ckpt.load_state(model_.state());
    const auto& params = optimizer_.params();
    auto& st = optimizer_.state();
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = ckpt.get("adam.m." + params[i].name).data;
        st.v[i] = ckpt.get("adam.v." + params[i].name).data;
    }
    st.step = static_cast<std::uint64_t>(ckpt.scalar("adam.step"));
    scheduler_.restore(ckpt.scalar("sched.lr"), ckpt.scalar("sched.best"),
                       static_cast<std::size_t>(ckpt.scalar("sched.bad")));
    best_val_ = ckpt.scalar("trainer.best_val");
    best_epoch_ = static_cast<std::size_t>(ckpt.scalar("trainer.best_epoch"));
    finished_ = ckpt.scalar("trainer.finished") != 0.0;
    history_.clear();
    if (const auto* h = ckpt.find("trainer.history")) {
        require(h->shape.size() == 2 && h->shape[1] == kHistoryCols, ErrorCode::Schema, "malformed training history");
        for (std::size_t r = 0; r < h->shape[0]; ++r) {
            const double* row = h->data.data() + r * kHistoryCols;
            history_.push_back({static_cast<std::size_t>(row[0]), row[1], row[2], row[3], row[4], row[5], row[6], row[7]});
        }
    }
    // A raised epoch cap reopens a run that stopped on the old one.
    if (finished_ && !history_.empty() && history_.size() < cfg_.train.max_epochs && !scheduler_.should_stop()) {
        const auto& tc = cfg_.train;
        const double last = history_.back().train_metric;
        const bool reached = !std::isnan(tc.stop_train_metric) &&
                             (higher_is_better(tc.resolved_metric()) ? last >= tc.stop_train_metric
                                                                     : last <= tc.stop_train_metric);
        finished_ = reached;
    }
}

LoadedModel load_model(const Checkpoint& ckpt) {
    RunConfig cfg = parse_config(ckpt.config_text);
    PhcModel model(cfg.model, cfg.seed);
    ckpt.load_state(model.state());
    return {std::move(cfg), std::move(model)};
}

std::vector<const Graph*> select_split(const Dataset& data, const RunConfig& cfg, std::string_view split) {
    std::vector<const Graph*> out;
    if (split == "all") {
        for (const auto& g : data.graphs) out.push_back(&g);
        return out;
    }
    const auto s = split_indices(data.graphs.size(), cfg.data.train_fraction, cfg.data.val_fraction, cfg.seed);
    const std::vector<std::size_t>* idx = nullptr;
    if (split == "train") idx = &s.train;
    else if (split == "val") idx = &s.val;
    else if (split == "test") idx = &s.test;
    else fail(ErrorCode::InvalidArgument, fmt::format("unknown split '{}'", split));
    for (auto i : *idx) out.push_back(&data.graphs[i]);
    return out;
}

TrainRun train_from_config(RunConfig cfg, bool resume) {
    Dataset data = load_jsonl(cfg.data.path);
    spdlog::info("dataset {}: {}", cfg.data.path, data.schema.summary());
    cfg.resolve(data);
    const auto s = split_indices(data.graphs.size(), cfg.data.train_fraction, cfg.data.val_fraction, cfg.seed);
    std::vector<Graph> train, val;
    for (auto i : s.train) train.push_back(data.graphs[i]);
    for (auto i : s.val) val.push_back(data.graphs[i]);
    Trainer trainer(cfg, std::move(train), std::move(val));
    spdlog::info("model has {} trainable parameters", trainer.model().count_parameters());
    const auto last = std::filesystem::path(cfg.output_dir) / "last.ckpt";
    if (resume && std::filesystem::exists(last)) {
        trainer.restore(read_checkpoint(last.string()));
        spdlog::info("resumed from {} at epoch {}", last.string(), trainer.history().size());
    }
    trainer.fit(cfg.output_dir);
    return {trainer.config(), trainer.history(), trainer.stop_reason(), trainer.best_epoch()};
}

} // namespace phc
