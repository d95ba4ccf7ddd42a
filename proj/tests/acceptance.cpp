// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#ifdef __GLIBC__
#include <malloc.h>
#endif
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "phc/diagnostics.hpp"
#include "phc/grad_check.hpp"
#include "phc/trainer.hpp"
#include "test_util.hpp"

using namespace phc;
using phc::testing::max_abs_diff;
using phc::testing::random_matrix;
using phc::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

// Tensor buffers of a few hundred KB are allocated and freed on every op;
// keep them on the heap instead of round-tripping through mmap.
void tune_allocator() {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// 1. Quaternion PHM layer against the written-out Hamilton product.
Outcome hamilton_equivalence() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        // k = d = 8 for the layer, so every W component is 2 x 2.
        phc::testing::QuaternionOracle oracle;
        for (int i = 0; i < 4; ++i) oracle.w.push_back(random_matrix(2, 2, rng));
        const PhmLinear layer(init_contributions(4, ContributionScheme::Quaternion, 0), oracle.w, false, true);
        const Tensor q = random_tensor({1, 8}, rng, false);
        worst = std::max(worst, max_abs_diff(values(layer.forward(q)), oracle.apply(q.data())));
    }
    const double elapsed = seconds_since(t0);
    return {worst < 1e-12 && elapsed < 1.0, fmt::format("max abs err {:.2e}, {:.3f} s", worst, elapsed)};
}

// 2. Stored trainable scalars per layer.
Outcome parameter_accounting() {
    std::size_t cases = 0, wrong = 0;
    for (std::size_t n : {1, 2, 4, 8})
        for (std::size_t k : {16, 64, 512})
            for (std::size_t d : {16, 64, 512})
                for (bool bias : {false, true}) {
                    const PhmLinear layer =
                        init_phm(n, k, d, PhmInit{WeightInit::PhcNormal, ContributionScheme::Uniform, bias}, 0);
                    const std::size_t expected = k * d / n + n * n * n + (bias ? k : 0);
                    std::size_t stored = layer.contributions().numel() + layer.weights().numel();
                    if (bias) stored += layer.bias().numel();
                    ++cases;
                    if (layer.num_trainable() != expected || stored != expected) ++wrong;
                }
    return {wrong == 0, fmt::format("{} layer shapes, {} mismatches", cases, wrong)};
}

ModelConfig toy_model(std::size_t n) {
    ModelConfig cfg;
    cfg.n = n;
    cfg.hidden = 64;
    cfg.layers = 2;
    cfg.dn_widths = {64, 32};
    cfg.dn_dropout = {0.0, 0.0};
    cfg.features.node_vocab = {4};
    cfg.features.edge_vocab = {3};
    return cfg;
}

// 3. Fewer parameters as n grows.
Outcome parameter_monotonicity() {
    std::vector<std::size_t> counts;
    for (std::size_t n : {1, 2, 4}) counts.push_back(count_parameters(PhcModel(toy_model(n), 0)));
    const bool pass = counts[0] > counts[1] && counts[1] > counts[2];
    return {pass, fmt::format("n=1: {}, n=2: {}, n=4: {}", counts[0], counts[1], counts[2])};
}

Tensor away_from_kinks(Shape shape, std::mt19937_64& rng) {
    Tensor t = random_tensor(std::move(shape), rng);
    for (auto& v : t.mutable_data()) v = (v < 0 ? -0.1 : 0.1) + v;
    return t;
}

// 4. Finite differences on every primitive, a PHM layer and the whole model.
Outcome gradient_suite() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(4);
    double prim = 0.0;
    std::size_t checked = 0;
    auto check = [&](const std::function<Tensor(std::vector<Tensor>&)>& build, std::vector<Tensor> in) {
        const Tensor w = random_tensor(build(in).shape(), rng, false);
        auto f = [&]() { return ops::sum(ops::mul(build(in), w)); };
        prim = std::max(prim, grad_check(f, in, 1e-6));
        ++checked;
    };
    auto r = [&](Shape s) { return random_tensor(std::move(s), rng); };
    check([](auto& in) { return ops::matmul(in[0], in[1]); }, {r({3, 4}), r({4, 2})});
    check([](auto& in) { return ops::matmul_nt(in[0], in[1]); }, {r({3, 4}), r({5, 4})});
    check([](auto& in) { return ops::kron(in[0], in[1]); }, {r({2, 3}), r({3, 2})});
    check([](auto& in) { return ops::kron_sum(in[0], in[1]); }, {r({3, 3, 3}), r({3, 2, 4})});
    check([](auto& in) { return ops::add(in[0], in[1]); }, {r({2, 3}), r({2, 3})});
    check([](auto& in) { return ops::sub(in[0], in[1]); }, {r({2, 3}), r({2, 3})});
    check([](auto& in) { return ops::mul(in[0], in[1]); }, {r({2, 3}), r({2, 3})});
    check([](auto& in) { return ops::add_n(std::span<const Tensor>(in)); }, {r({4}), r({4}), r({4})});
    check([](auto& in) { return ops::add_bias(in[0], in[1]); }, {r({3, 2}), r({2})});
    check([](auto& in) { return ops::scale(in[0], -1.7); }, {r({5})});
    check([](auto& in) { return ops::mul_scalar(in[0], in[1]); }, {r({2, 2}), r({1})});
    check([](auto& in) { return ops::relu(in[0]); }, {away_from_kinks({3, 4}, rng)});
    check([](auto& in) { return ops::abs(in[0]); }, {away_from_kinks({3, 4}, rng)});
    check([](auto& in) { return ops::sigmoid(in[0]); }, {r({3, 4})});
    check([](auto& in) { return ops::exp(in[0]); }, {r({3, 4})});
    check([](auto& in) { return ops::sum(in[0]); }, {r({2, 3})});
    check([](auto& in) { return ops::mean(in[0]); }, {r({2, 3})});
    check([](auto& in) { return ops::reshape(in[0], {2, 3, 2}); }, {r({2, 6})});
    check([](auto& in) { return ops::concat(std::span<const Tensor>(in), 1); }, {r({2, 3}), r({2, 1})});
    check([](auto& in) { return ops::tile_cols(in[0], 3); }, {r({2, 2})});
    const std::vector<std::int64_t> idx{2, 0, 2, 1}, seg{0, 2, 0, 2, 2, 0};
    check([&](auto& in) { return ops::gather_rows(in[0], idx); }, {r({3, 2})});
    for (auto mode : {ops::SegmentReduce::Sum, ops::SegmentReduce::Mean, ops::SegmentReduce::Min,
                      ops::SegmentReduce::Max}) {
        check([&](auto& in) { return ops::segment_reduce(in[0], seg, 4, mode); }, {r({6, 3})});
    }
    check([&](auto& in) { return ops::segment_softmax(in[0], seg, 4); }, {r({6, 3})});
    check([](auto& in) { return ops::batch_norm_train(in[0], in[1], in[2], 1e-5); }, {r({5, 3}), r({3}), r({3})});
    const std::vector<double> mu{0.1, -0.2, 0.3}, var{1.5, 0.7, 2.0};
    check([&](auto& in) { return ops::batch_norm_eval(in[0], in[1], in[2], mu, var, 1e-5); },
          {r({4, 3}), r({3}), r({3})});
    for (double p : {1.5, 2.0, 3.0}) check([p](auto& in) { return ops::stack_lp_norm(in[0], p); }, {r({3, 2, 2})});
    const std::vector<double> target{0.5, -1.0, 2.0, 0.25, 7.0, 1.0}, labels{1.0, 0.0, 0.0, 1.0};
    check([&](auto& in) { return ops::mae_loss(in[0], target); }, {away_from_kinks({3, 2}, rng)});
    check([&](auto& in) { return ops::bce_with_logits(in[0], labels); }, {r({2, 2})});
    const std::vector<std::int64_t> classes{2, 0, 1};
    check([&](auto& in) { return ops::softmax_cross_entropy(in[0], classes); }, {r({3, 4})});

    // PHM layer alone (no batchnorm, no dropout), every scheme with trainable C.
    double layer_err = 0.0;
    for (std::size_t n : {1, 2, 4}) {
        PhmLinear layer = init_phm(n, 8, 12, PhmInit{WeightInit::PhcNormal, ContributionScheme::Uniform, true}, n);
        for (auto& v : layer.bias().mutable_data()) v = 0.1;
        const Tensor x = random_tensor({5, 12}, rng, false);
        const Tensor w = random_tensor({5, 8}, rng, false);
        std::vector<Tensor> params{layer.contributions(), layer.weights(), layer.bias()};
        auto f = [&]() { return ops::sum(ops::mul(ops::sigmoid(layer.forward(x)), w)); };
        layer_err = std::max(layer_err, grad_check(f, params, 1e-6));
    }

    // Full model on the bundled 8-node graph, every parameter coordinate.
    const Graph g = bundled_graph();
    ModelConfig cfg;
    cfg.n = 4;
    cfg.hidden = 16;
    cfg.layers = 2;
    cfg.dn_widths = {16, 8};
    cfg.dn_dropout = {0.0, 0.0};
    TrainConfig train;
    train.lambda1 = 1e-3;
    train.lambda2 = 1e-3;
    const auto model = check_model_gradients(cfg, train, 4, std::span(&g, 1), GradCheckOptions{1e-6, 0});

    const double elapsed = seconds_since(t0);
    const double worst = std::max({prim, layer_err, model.max_rel_error});
    return {worst < 1e-4 && elapsed < 60.0,
            fmt::format("primitives {:.1e} ({} ops), phm layer {:.1e}, model {:.1e} ({} coords), {:.1f} s", prim,
                        checked, layer_err, model.max_rel_error, model.coords_checked, elapsed)};
}

// 5. Shifted identity rank and sparsity, contribution_reg, uniform draws.
Outcome init_properties() {
    bool pass = true;
    double reg_err = 0.0;
    for (std::size_t n : {1, 3, 5, 8, 16}) {
        const ContributionSet c = init_contributions(n, ContributionScheme::ShiftedIdentity, 0);
        for (const auto& m : c.matrices) {
            pass &= phc::testing::matrix_rank(m) == n;
            pass &= count_nonzero(m) == n;
        }
        const PhmLinear layer = init_phm(n, 2 * n, n, PhmInit{WeightInit::PhcNormal, ContributionScheme::ShiftedIdentity}, 0);
        reg_err = std::max(reg_err, std::fabs(contribution_reg(layer).item() - 1.0 / static_cast<double>(n)));
    }
    pass &= reg_err < 1e-12;
    // 100 matrices of 100 x 100 give 10^6 draws.
    const ContributionSet u = init_contributions(100, ContributionScheme::Uniform, 11);
    double sum = 0.0, lo = 1.0, hi = -1.0;
    std::size_t draws = 0;
    for (const auto& m : u.matrices)
        for (double v : m.data()) {
            sum += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            ++draws;
        }
    const double mean = sum / static_cast<double>(draws);
    pass &= lo > -1.0 && hi < 1.0 && std::fabs(mean) < 0.005 && draws == 1000000;
    return {pass, fmt::format("rank and nonzeros checked for n in 1,3,5,8,16; reg err {:.1e}; uniform mean {:.2e} "
                              "over {} draws in [{:.6f}, {:.6f}]",
                              reg_err, mean, draws, lo, hi)};
}

struct RandomGraph {
    std::size_t nodes;
    std::vector<std::int64_t> src, dst;
};

RandomGraph random_edges(std::size_t nodes, double density, std::mt19937_64& rng) {
    RandomGraph g{nodes, {}, {}};
    std::bernoulli_distribution keep(density);
    for (std::size_t u = 0; u < nodes; ++u)
        for (std::size_t v = 0; v < nodes; ++v)
            if (u != v && keep(rng)) {
                g.src.push_back(static_cast<std::int64_t>(u));
                g.dst.push_back(static_cast<std::int64_t>(v));
            }
    return g;
}

// 6. Softmax aggregation at the temperature limits.
Outcome aggregator_limits() {
    std::mt19937_64 rng(6);
    double to_mean = 0.0, to_max = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const RandomGraph g = random_edges(10, 0.3, rng);
        const std::size_t width = 6;
        const Tensor h = random_tensor({g.nodes, width}, rng, false);
        const Tensor e = random_tensor({g.src.size(), width}, rng, false);
        const auto soft0 = values(aggregate(h, e, g.src, g.dst, Aggregator::Softmax, Tensor::scalar(0.0)));
        const auto mean = values(aggregate(h, e, g.src, g.dst, Aggregator::Mean, {}));
        to_mean = std::max(to_mean, max_abs_diff(soft0, mean));

        // Well separated: distinct integer levels two apart, per channel.
        std::vector<double> levels(g.nodes * width);
        for (std::size_t c = 0; c < width; ++c) {
            std::vector<double> col(g.nodes);
            std::iota(col.begin(), col.end(), 0.0);
            std::shuffle(col.begin(), col.end(), rng);
            for (std::size_t v = 0; v < g.nodes; ++v) levels[v * width + c] = 2.0 * col[v];
        }
        const Tensor hs = Tensor::from({g.nodes, width}, levels);
        const auto soft = values(aggregate(hs, {}, g.src, g.dst, Aggregator::Softmax, Tensor::scalar(100.0)));
        const auto max = values(aggregate(hs, {}, g.src, g.dst, Aggregator::Max, {}));
        to_max = std::max(to_max, max_abs_diff(soft, max));
    }
    return {to_mean < 1e-10 && to_max < 1e-6,
            fmt::format("tau=0 vs mean {:.1e}, tau=100 vs max {:.1e} over 20 graphs", to_mean, to_max)};
}

RunConfig triangle_config(std::size_t n, const Dataset& data, std::size_t max_epochs) {
    RunConfig cfg;
    cfg.seed = 7;
    cfg.model.n = n;
    cfg.model.hidden = 64;
    cfg.model.layers = 4;
    cfg.model.batchnorm = false;
    cfg.model.dn_widths = {64, 32};
    cfg.model.dn_dropout = {0.0, 0.0};
    cfg.model.mp_dropout = 0.0;
    cfg.train.batch_size = 32;
    cfg.train.lr = 3e-3;
    cfg.train.patience = 6;
    cfg.train.max_epochs = max_epochs;
    cfg.train.stop_train_metric = 0.5;
    cfg.resolve(data);
    return cfg;
}

// 7. End-to-end triangle counting.
Outcome end_to_end(std::size_t max_epochs) {
    const auto t0 = Clock::now();
    Dataset data;
    data.graphs = generate_synthetic(SyntheticKind::TriangleCount, 2000, 7);
    data.schema = infer_schema(data.graphs);
    bool pass = true;
    std::string detail;
    std::vector<std::size_t> counts;
    for (std::size_t n : {1, 2, 4}) {
        const RunConfig cfg = triangle_config(n, data, max_epochs);
        Trainer a(cfg, data.graphs, {});
        a.fit("");
        Trainer b(cfg, data.graphs, {});
        b.fit("");
        bool same = a.history().size() == b.history().size();
        for (std::size_t e = 0; same && e < a.history().size(); ++e)
            same = a.history()[e].train_loss == b.history()[e].train_loss &&
                   a.history()[e].train_metric == b.history()[e].train_metric;
        const double mae = a.history().back().train_metric;
        const std::size_t params = count_parameters(a.model());
        counts.push_back(params);
        pass &= same && mae < 0.5;
        detail += fmt::format("n={}: mae {:.3f} after {} epochs, {} params, traces {}; ", n, mae, a.history().size(),
                              params, same ? "identical" : "DIFFER");
    }
    pass &= counts[1] < counts[0] && counts[2] < counts[0];
    const double elapsed = seconds_since(t0);
    pass &= elapsed < 600.0;
    return {pass, detail + fmt::format("{:.0f} s", elapsed)};
}

// 8. The sparsity penalty lowers contribution_reg.
Outcome sparsity_direction() {
    Dataset data;
    data.graphs = generate_synthetic(SyntheticKind::TriangleCount, 64, 3);
    data.schema = infer_schema(data.graphs);
    double reg[2] = {0.0, 0.0};
    for (int with = 0; with < 2; ++with) {
        RunConfig cfg;
        cfg.seed = 8;
        cfg.model.n = 8;
        cfg.model.hidden = 16;
        cfg.model.layers = 2;
        cfg.model.dn_widths = {16, 8};
        cfg.model.dn_dropout = {0.0, 0.0};
        cfg.model.contribution_init = ContributionScheme::Uniform;
        cfg.train.batch_size = 32;
        cfg.train.lr = 5e-3;
        cfg.train.max_epochs = 50;
        cfg.train.lambda2 = with ? 1e-2 : 0.0;
        cfg.resolve(data);
        Trainer t(cfg, data.graphs, {});
        t.fit("");
        reg[with] = t.history().back().contribution_reg;
    }
    return {reg[1] < reg[0], fmt::format("lambda2=1e-2: {:.6f}, lambda2=0: {:.6f}", reg[1], reg[0])};
}

// 9. Component-mode dropout is unbiased.
Outcome dropout_unbiased() {
    std::mt19937_64 rng(9);
    Tensor h = random_tensor({2, 4, 3}, rng, false);
    for (auto& v : h.mutable_data()) v += v < 0 ? -0.5 : 0.5;
    Rng drng(9);
    std::vector<double> acc(h.numel(), 0.0);
    const int draws = 100000;
    for (int t = 0; t < draws; ++t) {
        const Tensor y = hc_dropout(h, 0.3, DropoutMode::Component, Mode::Train, drng);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += y.data()[i];
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < acc.size(); ++i) worst = std::max(worst, std::fabs(acc[i] / draws / h.data()[i] - 1.0));
    return {worst < 0.02, fmt::format("max relative deviation {:.4f} over {} entries", worst, acc.size())};
}

// 10. Node relabelling leaves eval-mode logits unchanged.
Outcome permutation_invariance() {
    std::mt19937_64 rng(10);
    Graph g;
    g.num_nodes = 12;
    g.node_cat_fields = 1;
    g.edge_cat_fields = 1;
    std::uniform_int_distribution<int> atom(0, 3), bond(0, 2);
    for (std::size_t v = 0; v < g.num_nodes; ++v) g.node_cat.push_back(atom(rng));
    std::bernoulli_distribution keep(0.3);
    for (std::int64_t u = 0; u < 12; ++u)
        for (std::int64_t v = u + 1; v < 12; ++v)
            if (keep(rng)) g.add_undirected_edge(u, v, std::vector<std::int64_t>{bond(rng)});
    g.target = {0.0};

    double worst = 0.0;
    for (auto kind : {Aggregator::Sum, Aggregator::Mean, Aggregator::Softmax}) {
        ModelConfig cfg = toy_model(2);
        cfg.hidden = 16;
        cfg.dn_widths = {16, 8};
        cfg.aggregator = kind;
        PhcModel model(cfg, 10);
        for (auto& t : model.state()) {
            if (t.kind != ParamKind::Buffer) continue;
            std::uniform_real_distribution<double> u(0.5, 1.5);
            for (auto& v : t.tensor.mutable_data()) v = t.name.ends_with("var") ? u(rng) : u(rng) - 1.0;
        }
        auto logits = [&](const Graph& x) {
            ForwardContext ctx{Mode::Eval, nullptr};
            return values(model.forward(collate(std::span(&x, 1)), ctx));
        };
        const auto base = logits(g);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<std::size_t> perm(12), order(g.num_edges());
            std::iota(perm.begin(), perm.end(), 0);
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
            std::shuffle(order.begin(), order.end(), rng);
            Graph p = g;
            for (std::size_t v = 0; v < 12; ++v) p.node_cat[perm[v]] = g.node_cat[v];
            for (std::size_t e = 0; e < order.size(); ++e) {
                p.src[e] = static_cast<std::int64_t>(perm[g.src[order[e]]]);
                p.dst[e] = static_cast<std::int64_t>(perm[g.dst[order[e]]]);
                p.edge_cat[e] = g.edge_cat[order[e]];
            }
            worst = std::max(worst, max_abs_diff(base, logits(p)));
        }
    }
    return {worst < 1e-10, fmt::format("max logit change {:.1e} over 150 relabellings ({} edges)", worst, g.num_edges())};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::vector<int> only;
    std::size_t max_epochs = 300;
    app.add_option("--only", only, "criteria to run (default: all)");
    app.add_option("--max-epochs", max_epochs, "epoch budget for the end-to-end run");
    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::warn);
    tune_allocator();

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"hamilton equivalence", hamilton_equivalence},
        {"parameter accounting", parameter_accounting},
        {"parameter monotonicity", parameter_monotonicity},
        {"gradient suite", gradient_suite},
        {"initialization properties", init_properties},
        {"aggregator limits", aggregator_limits},
        {"end-to-end triangle count", [&] { return end_to_end(max_epochs); }},
        {"sparsity regularizer direction", sparsity_direction},
        {"dropout unbiasedness", dropout_unbiased},
        {"permutation invariance", permutation_invariance},
    };
    const std::set<int> selected(only.begin(), only.end());
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        fmt::print("{} {:2d} {}: {}\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail);
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
