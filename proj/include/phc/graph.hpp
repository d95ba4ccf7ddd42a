#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace phc {

/// One graph with its features and target. Edges are directed and, for an
/// undirected input, both orientations are stored (message passing runs over
/// this list as given).
struct Graph {
    std::size_t num_nodes = 0;

    std::size_t node_cat_fields = 0;
    std::vector<std::int64_t> node_cat; // num_nodes x node_cat_fields
    std::size_t node_cont_dim = 0;
    std::vector<double> node_cont; // num_nodes x node_cont_dim

    std::vector<std::int64_t> src;
    std::vector<std::int64_t> dst;
    std::size_t edge_cat_fields = 0;
    std::vector<std::int64_t> edge_cat; // num_edges x edge_cat_fields
    std::size_t edge_cont_dim = 0;
    std::vector<double> edge_cont; // num_edges x edge_cont_dim

    /// Per-graph target; NaN marks a missing label.
    std::vector<double> target;

    std::size_t num_edges() const { return src.size(); }

    /// Appends (u, v) and (v, u) with identical features.
    void add_undirected_edge(std::int64_t u, std::int64_t v, std::span<const std::int64_t> cat = {},
                             std::span<const double> cont = {});

    /// Checks array sizes and endpoint bounds.
    void validate() const;
};

/// Several graphs stacked into one disjoint union.
struct GraphBatch {
    std::size_t num_nodes = 0;
    std::size_t num_graphs = 0;

    std::size_t node_cat_fields = 0;
    std::vector<std::int64_t> node_cat;
    std::size_t node_cont_dim = 0;
    std::vector<double> node_cont;

    std::vector<std::int64_t> src;
    std::vector<std::int64_t> dst;
    std::size_t edge_cat_fields = 0;
    std::vector<std::int64_t> edge_cat;
    std::size_t edge_cont_dim = 0;
    std::vector<double> edge_cont;

    std::vector<std::int64_t> graph_id; // node -> graph
    std::size_t target_dim = 0;
    std::vector<double> targets; // num_graphs x target_dim

    std::size_t num_edges() const { return src.size(); }
    /// Field `f` of every node as one index column.
    std::vector<std::int64_t> node_field(std::size_t f) const;
    std::vector<std::int64_t> edge_field(std::size_t f) const;
    void validate() const;
};

/// Concatenates graphs, offsetting node ids. All graphs must share one
/// feature layout and target width.
GraphBatch collate(std::span<const Graph* const> graphs);
GraphBatch collate(std::span<const Graph> graphs);

} // namespace phc
