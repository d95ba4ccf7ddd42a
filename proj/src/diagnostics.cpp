#include "phc/diagnostics.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <fmt/format.h>

#include "phc/dataset.hpp"

namespace phc {

Graph bundled_graph() {
    Graph g;
    g.num_nodes = 8;
    g.node_cat_fields = 1;
    g.node_cat = {0, 1, 2, 3, 1, 0, 2, 1};
    g.edge_cat_fields = 1;
    const std::int64_t edges[][3] = {{0, 1, 0}, {1, 2, 1}, {2, 3, 0}, {3, 4, 2}, {4, 5, 1},
                                     {5, 6, 0}, {6, 7, 2}, {7, 0, 1}, {0, 4, 2}, {2, 6, 1}};
    for (const auto& e : edges) {
        const std::int64_t cat = e[2];
        g.add_undirected_edge(e[0], e[1], std::span(&cat, 1));
    }
    g.target = {1.5};
    return g;
}

GradCheckResult check_model_gradients(ModelConfig model, const TrainConfig& train, std::uint64_t seed,
                                      std::span<const Graph> graphs, const GradCheckOptions& options) {
    require(!graphs.empty(), ErrorCode::InvalidArgument, "gradient check needs at least one graph");
    model.mp_dropout = 0.0;
    for (auto& p : model.dn_dropout) p = 0.0;
    model.features = infer_schema(graphs).features;
    if (model.out_dim == 0) model.out_dim = 1;
    PhcModel net(model, seed);

    std::vector<Graph> copies(graphs.begin(), graphs.end());
    const std::size_t rows = model.node_level ? 0 : copies.size();
    for (std::size_t gi = 0; gi < rows; ++gi) {
        auto& t = copies[gi].target;
        if (train.task == TaskKind::Multiclass) {
            t = {static_cast<double>(gi % model.out_dim)};
        } else {
            t.assign(model.out_dim, 0.0);
            for (std::size_t c = 0; c < model.out_dim; ++c) {
                t[c] = train.task == TaskKind::Regression ? 0.75 * static_cast<double>(gi + c) - 1.3
                                                          : static_cast<double>((gi + c) % 2);
            }
        }
    }
    const GraphBatch batch = collate(std::span<const Graph>(copies));
    require(!model.node_level, ErrorCode::InvalidArgument, "gradient check covers graph-level models");

    auto f = [&]() {
        ForwardContext ctx{Mode::Train, nullptr};
        const Tensor logits = net.forward(batch, ctx);
        return total_loss(logits, batch.targets, net, train).total;
    };
    std::vector<Tensor> params;
    for (const auto& p : net.parameters()) params.push_back(p.tensor);
    return grad_check(f, params, options);
}

std::vector<LayerReport> inspect_layers(const TensorList& state, const std::string& out_dir) {
    const std::filesystem::path dir(out_dir);
    if (!out_dir.empty()) std::filesystem::create_directories(dir);
    auto write_matrix = [&](const std::string& file, const Matrix& m) {
        std::ofstream out(dir / file, std::ios::trunc);
        require(static_cast<bool>(out), ErrorCode::Io, fmt::format("cannot write '{}'", (dir / file).string()));
        write_csv(out, m);
    };
    std::vector<LayerReport> reports;
    for (const auto& entry : state) {
        if (entry.kind != ParamKind::Contribution) continue;
        const std::string prefix = entry.name.substr(0, entry.name.size() - 2); // strip ".C"
        const auto w_it = std::find_if(state.begin(), state.end(), [&](const auto& t) { return t.name == prefix + ".W"; });
        require(w_it != state.end(), ErrorCode::Schema, fmt::format("layer '{}' has no weight stack", prefix));
        const Tensor& c = entry.tensor;
        const Tensor& w = w_it->tensor;
        const std::size_t n = c.dim(0), r = w.dim(1), cols = w.dim(2);
        ContributionSet set{n, {}};
        std::vector<Matrix> weights;
        for (std::size_t i = 0; i < n; ++i) {
            const auto cv = c.data().subspan(i * n * n, n * n);
            const auto wv = w.data().subspan(i * r * cols, r * cols);
            set.matrices.emplace_back(n, n, std::vector<double>(cv.begin(), cv.end()));
            weights.emplace_back(r, cols, std::vector<double>(wv.begin(), wv.end()));
        }
        const AssembledWeight u = assemble(set, weights);
        LayerReport rep{prefix, n, u.k, u.d, sparsity(u.matrix), {}};
        for (const auto& m : set.matrices) rep.nonzeros.push_back(count_nonzero(m));
        if (!out_dir.empty()) {
            write_matrix(prefix + ".U.csv", u.matrix);
            for (std::size_t i = 0; i < n; ++i) write_matrix(fmt::format("{}.C{}.csv", prefix, i + 1), set.matrices[i]);
        }
        reports.push_back(std::move(rep));
    }
    if (!out_dir.empty()) {
        std::ofstream out(dir / "summary.csv", std::ios::trunc);
        require(static_cast<bool>(out), ErrorCode::Io, "cannot write summary.csv");
        out << "layer,n,k,d,sparsity_U,nonzeros_C\n";
        for (const auto& r : reports) {
            std::string nz;
            for (std::size_t i = 0; i < r.nonzeros.size(); ++i) nz += (i ? " " : "") + std::to_string(r.nonzeros[i]);
            out << fmt::format("{},{},{},{},{:.17g},{}\n", r.name, r.n, r.k, r.d, r.sparsity, nz);
        }
    }
    return reports;
}

} // namespace phc
