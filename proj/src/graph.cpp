#include "phc/graph.hpp"

#include <fmt/format.h>

#include "phc/error.hpp"

namespace phc {

void Graph::add_undirected_edge(std::int64_t u, std::int64_t v, std::span<const std::int64_t> cat,
                                std::span<const double> cont) {
    for (auto [a, b] : {std::pair{u, v}, std::pair{v, u}}) {
        src.push_back(a);
        dst.push_back(b);
        edge_cat.insert(edge_cat.end(), cat.begin(), cat.end());
        edge_cont.insert(edge_cont.end(), cont.begin(), cont.end());
    }
}

void Graph::validate() const {
    require(num_nodes > 0, ErrorCode::Schema, "graph has no nodes");
    require(node_cat.size() == num_nodes * node_cat_fields, ErrorCode::Schema,
            "node categorical features do not match node count");
    require(node_cont.size() == num_nodes * node_cont_dim, ErrorCode::Schema,
            "node continuous features do not match node count");
    require(src.size() == dst.size(), ErrorCode::Schema, "edge endpoint arrays differ in length");
    require(edge_cat.size() == num_edges() * edge_cat_fields, ErrorCode::Schema,
            "edge categorical features do not match edge count");
    require(edge_cont.size() == num_edges() * edge_cont_dim, ErrorCode::Schema,
            "edge continuous features do not match edge count");
    for (std::size_t e = 0; e < num_edges(); ++e) {
        for (auto x : {src[e], dst[e]}) {
            if (!(x >= 0 && static_cast<std::size_t>(x) < num_nodes))
                fail(ErrorCode::OutOfRange,
                     fmt::format("edge ({}, {}) references a node outside [0, {})", src[e], dst[e], num_nodes));
        }
    }
}

std::vector<std::int64_t> GraphBatch::node_field(std::size_t f) const {
    std::vector<std::int64_t> out(num_nodes);
    for (std::size_t v = 0; v < num_nodes; ++v) out[v] = node_cat[v * node_cat_fields + f];
    return out;
}

std::vector<std::int64_t> GraphBatch::edge_field(std::size_t f) const {
    std::vector<std::int64_t> out(num_edges());
    for (std::size_t e = 0; e < out.size(); ++e) out[e] = edge_cat[e * edge_cat_fields + f];
    return out;
}

void GraphBatch::validate() const {
    require(graph_id.size() == num_nodes, ErrorCode::Schema, "graph_id must cover every node");
    for (auto g : graph_id) {
        if (!(g >= 0 && static_cast<std::size_t>(g) < num_graphs))
            fail(ErrorCode::OutOfRange, fmt::format("graph id {} outside [0, {})", g, num_graphs));
    }
    for (std::size_t e = 0; e < num_edges(); ++e) {
        for (auto x : {src[e], dst[e]}) {
            if (!(x >= 0 && static_cast<std::size_t>(x) < num_nodes))
                fail(ErrorCode::OutOfRange, fmt::format("edge endpoint {} outside [0, {})", x, num_nodes));
        }
    }
    require(targets.size() == num_graphs * target_dim, ErrorCode::Schema, "target array size mismatch");
}

GraphBatch collate(std::span<const Graph* const> graphs) {
    require(!graphs.empty(), ErrorCode::InvalidArgument, "cannot collate an empty batch");
    const Graph& first = *graphs[0];
    GraphBatch batch;
    batch.num_graphs = graphs.size();
    batch.node_cat_fields = first.node_cat_fields;
    batch.node_cont_dim = first.node_cont_dim;
    batch.edge_cat_fields = first.edge_cat_fields;
    batch.edge_cont_dim = first.edge_cont_dim;
    batch.target_dim = first.target.size();
    std::int64_t offset = 0;
    for (std::size_t g = 0; g < graphs.size(); ++g) {
        const Graph& gr = *graphs[g];
        require(gr.node_cat_fields == batch.node_cat_fields && gr.node_cont_dim == batch.node_cont_dim &&
                    gr.edge_cat_fields == batch.edge_cat_fields && gr.edge_cont_dim == batch.edge_cont_dim,
                ErrorCode::Schema, "graphs in one batch must share a feature layout");
        require(gr.target.size() == batch.target_dim, ErrorCode::Schema,
                "graphs in one batch must share a target width");
        batch.node_cat.insert(batch.node_cat.end(), gr.node_cat.begin(), gr.node_cat.end());
        batch.node_cont.insert(batch.node_cont.end(), gr.node_cont.begin(), gr.node_cont.end());
        for (std::size_t e = 0; e < gr.num_edges(); ++e) {
            batch.src.push_back(gr.src[e] + offset);
            batch.dst.push_back(gr.dst[e] + offset);
        }
        batch.edge_cat.insert(batch.edge_cat.end(), gr.edge_cat.begin(), gr.edge_cat.end());
        batch.edge_cont.insert(batch.edge_cont.end(), gr.edge_cont.begin(), gr.edge_cont.end());
        batch.graph_id.insert(batch.graph_id.end(), gr.num_nodes, static_cast<std::int64_t>(g));
        batch.targets.insert(batch.targets.end(), gr.target.begin(), gr.target.end());
        offset += static_cast<std::int64_t>(gr.num_nodes);
    }
    batch.num_nodes = static_cast<std::size_t>(offset);
    return batch;
}

GraphBatch collate(std::span<const Graph> graphs) {
    std::vector<const Graph*> ptrs;
    ptrs.reserve(graphs.size());
    for (const auto& g : graphs) ptrs.push_back(&g);
    return collate(std::span<const Graph* const>(ptrs));
}

} // namespace phc
