#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phc/graph.hpp"
#include "phc/model.hpp"

namespace phc {

/// Shape summary of a loaded dataset. Vocabularies are max index + 1 per field.
struct DatasetSchema {
    std::size_t num_graphs = 0;
    std::size_t total_nodes = 0;
    std::size_t total_edges = 0; // directed rows, both orientations
    FeatureSchema features;
    std::size_t target_dim = 0;
    bool integer_targets = false;

    std::string summary() const;
};

struct Dataset {
    std::vector<Graph> graphs;
    DatasetSchema schema;
};

/// JSON Lines, one graph per line:
///   {"nodes": [[cat...] | [float...] | {"cat": [...], "x": [...]}, ...],
///    "edges": [[u, v], ...], "edge_feats": [...], "target": [..] | int}
/// A node list whose entries are all integers is categorical; one holding any
/// non-integer number is continuous. Edges are undirected and stored in both
/// orientations. Null targets load as NaN.
Dataset parse_jsonl(std::istream& in, std::string_view source = "<stream>");
Dataset load_jsonl(const std::string& path);

/// Inverse of parse_jsonl for graphs whose edges come in (u, v), (v, u) pairs.
void write_jsonl(std::ostream& out, std::span<const Graph> graphs);

DatasetSchema infer_schema(std::span<const Graph> graphs);

enum class SyntheticKind { RingRegression, TriangleCount, ComponentParity };
std::string_view to_string(SyntheticKind kind);
SyntheticKind parse_synthetic_kind(std::string_view name);

/// Random graphs with 6 to 20 nodes and one categorical node label in [0, 4).
///   ring-regression: cycle plus chords; target = number of chords.
///   triangle-count: sparse random graph; target = number of triangles.
///   component-parity: random forest; target = component count mod 2.
std::vector<Graph> generate_synthetic(SyntheticKind kind, std::size_t size, std::uint64_t seed);

/// Triangles of the undirected graph underlying the edge list.
std::size_t count_triangles(const Graph& g);
std::size_t count_components(const Graph& g);

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle of [0, count) cut by the given fractions (which sum to 1).
SplitIndices split_indices(std::size_t count, double train_fraction, double val_fraction, std::uint64_t seed);

} // namespace phc
