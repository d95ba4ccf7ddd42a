#include "phc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "json.hpp"
#include "phc/error.hpp"
#include "phc/random.hpp"

namespace phc {

using nlohmann::json;

namespace {

struct FeatureRow {
    std::vector<std::int64_t> cat;
    std::vector<double> cont;
};

[[noreturn]] void fail_line(ErrorCode code, std::string_view source, std::size_t line, std::string_view msg) {
    fail(code, fmt::format("{}:{}: {}", source, line, msg));
}

FeatureRow parse_features(const json& j, std::string_view what) {
    FeatureRow row;
    auto read_cat = [&](const json& arr) {
        for (const auto& v : arr) {
            if (!v.is_number_integer()) fail(ErrorCode::Parse, fmt::format("{}: categorical entries must be integers", what));
            const auto idx = v.get<std::int64_t>();
            if (idx < 0) fail(ErrorCode::OutOfRange, fmt::format("{}: negative categorical index {}", what, idx));
            row.cat.push_back(idx);
        }
    };
    auto read_cont = [&](const json& arr) {
        for (const auto& v : arr) {
            if (!v.is_number()) fail(ErrorCode::Parse, fmt::format("{}: continuous entries must be numbers", what));
            row.cont.push_back(v.get<double>());
        }
    };
    if (j.is_array()) {
        const bool all_int = std::all_of(j.begin(), j.end(), [](const json& v) { return v.is_number_integer(); });
        if (all_int) read_cat(j);
        else read_cont(j);
    } else if (j.is_object()) {
        for (const auto& [key, value] : j.items()) {
            if (!value.is_array()) fail(ErrorCode::Parse, fmt::format("{}: '{}' must be a list", what, key));
            if (key == "cat") read_cat(value);
            else if (key == "x") read_cont(value);
            else fail(ErrorCode::Parse, fmt::format("{}: unknown feature key '{}'", what, key));
        }
    } else {
        fail(ErrorCode::Parse, fmt::format("{}: features must be a list or an object", what));
    }
    return row;
}

void append_row(const FeatureRow& row, std::size_t& cat_fields, std::vector<std::int64_t>& cat,
                std::size_t& cont_dim, std::vector<double>& cont, bool first, std::string_view what) {
    if (first) {
        cat_fields = row.cat.size();
        cont_dim = row.cont.size();
    } else if (row.cat.size() != cat_fields || row.cont.size() != cont_dim) {
        fail(ErrorCode::Schema, fmt::format("{}: expected {} categorical and {} continuous entries, got {} and {}",
                                            what, cat_fields, cont_dim, row.cat.size(), row.cont.size()));
    }
    cat.insert(cat.end(), row.cat.begin(), row.cat.end());
    cont.insert(cont.end(), row.cont.begin(), row.cont.end());
}

Graph parse_graph(const json& j, bool& integer_target) {
    if (!j.is_object()) fail(ErrorCode::Parse, "each line must be a JSON object");
    Graph g;
    const auto nodes = j.find("nodes");
    if (nodes == j.end() || !nodes->is_array()) fail(ErrorCode::Parse, "missing 'nodes' list");
    g.num_nodes = nodes->size();
    if (g.num_nodes == 0) fail(ErrorCode::Schema, "graph has no nodes");
    for (std::size_t v = 0; v < g.num_nodes; ++v) {
        const auto what = fmt::format("node {}", v);
        append_row(parse_features((*nodes)[v], what), g.node_cat_fields, g.node_cat, g.node_cont_dim, g.node_cont,
                   v == 0, what);
    }

    const json empty = json::array();
    const auto edges_it = j.find("edges");
    const json& edges = edges_it == j.end() ? empty : *edges_it;
    if (!edges.is_array()) fail(ErrorCode::Parse, "'edges' must be a list");
    const auto feats_it = j.find("edge_feats");
    const bool has_feats = feats_it != j.end();
    if (has_feats && (!feats_it->is_array() || feats_it->size() != edges.size())) {
        fail(ErrorCode::Schema, "'edge_feats' must be a list parallel to 'edges'");
    }
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const auto& pair = edges[e];
        if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() || !pair[1].is_number_integer()) {
            fail(ErrorCode::Parse, fmt::format("edge {} must be a pair of integers", e));
        }
        const auto u = pair[0].get<std::int64_t>(), v = pair[1].get<std::int64_t>();
        for (auto x : {u, v}) {
            if (x < 0 || static_cast<std::size_t>(x) >= g.num_nodes) {
                fail(ErrorCode::OutOfRange, fmt::format("edge [{}, {}] references node {} but the graph has {} nodes",
                                                        u, v, x, g.num_nodes));
            }
        }
        FeatureRow row;
        if (has_feats) row = parse_features((*feats_it)[e], fmt::format("edge {}", e));
        if (e == 0) {
            g.edge_cat_fields = row.cat.size();
            g.edge_cont_dim = row.cont.size();
        } else if (row.cat.size() != g.edge_cat_fields || row.cont.size() != g.edge_cont_dim) {
            fail(ErrorCode::Schema, fmt::format("edge {}: feature layout differs from edge 0", e));
        }
        g.add_undirected_edge(u, v, row.cat, row.cont);
    }

    const auto target = j.find("target");
    if (target == j.end()) fail(ErrorCode::Schema, "missing 'target'");
    integer_target = target->is_number_integer();
    if (target->is_number()) {
        g.target.push_back(target->get<double>());
    } else if (target->is_array()) {
        for (const auto& t : *target) {
            if (t.is_null()) g.target.push_back(std::numeric_limits<double>::quiet_NaN());
            else if (t.is_number()) g.target.push_back(t.get<double>());
            else fail(ErrorCode::Parse, "target entries must be numbers or null");
        }
        if (g.target.empty()) fail(ErrorCode::Schema, "empty target list");
    } else {
        fail(ErrorCode::Parse, "'target' must be a number or a list");
    }
    g.validate();
    return g;
}

json features_to_json(std::span<const std::int64_t> cat, std::span<const double> cont) {
    if (cont.empty()) return json(std::vector<std::int64_t>(cat.begin(), cat.end()));
    if (cat.empty()) {
        // Whole-valued floats would read back as categorical from a bare list.
        return json{{"x", std::vector<double>(cont.begin(), cont.end())}};
    }
    return json{{"cat", std::vector<std::int64_t>(cat.begin(), cat.end())},
                {"x", std::vector<double>(cont.begin(), cont.end())}};
}

} // namespace

std::string DatasetSchema::summary() const {
    auto join = [](const std::vector<std::size_t>& v) {
        std::string out = "[";
        for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
        return out + "]";
    };
    return fmt::format("graphs={} nodes={} edges={} node_vocab={} node_cont_dim={} edge_vocab={} edge_cont_dim={} "
                       "target_dim={} integer_targets={}",
                       num_graphs, total_nodes, total_edges, join(features.node_vocab), features.node_cont_dim,
                       join(features.edge_vocab), features.edge_cont_dim, target_dim, integer_targets);
}

DatasetSchema infer_schema(std::span<const Graph> graphs) {
    require(!graphs.empty(), ErrorCode::Schema, "empty dataset");
    DatasetSchema s;
    const Graph& first = graphs[0];
    s.num_graphs = graphs.size();
    s.features.node_vocab.assign(first.node_cat_fields, 0);
    s.features.node_cont_dim = first.node_cont_dim;
    s.target_dim = first.target.size();
    bool edge_layout_known = false;
    std::size_t edge_cat_fields = 0;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const Graph& g = graphs[gi];
        require(g.node_cat_fields == first.node_cat_fields && g.node_cont_dim == first.node_cont_dim,
                ErrorCode::Schema, fmt::format("graph {}: node feature layout differs from graph 0", gi));
        require(g.target.size() == s.target_dim, ErrorCode::Schema,
                fmt::format("graph {}: target width {} differs from {}", gi, g.target.size(), s.target_dim));
        if (g.num_edges() > 0) {
            if (!edge_layout_known) {
                edge_layout_known = true;
                edge_cat_fields = g.edge_cat_fields;
                s.features.edge_cont_dim = g.edge_cont_dim;
                s.features.edge_vocab.assign(edge_cat_fields, 0);
            }
            require(g.edge_cat_fields == edge_cat_fields && g.edge_cont_dim == s.features.edge_cont_dim,
                    ErrorCode::Schema, fmt::format("graph {}: edge feature layout differs", gi));
        }
        s.total_nodes += g.num_nodes;
        s.total_edges += g.num_edges();
        for (std::size_t i = 0; i < g.node_cat.size(); ++i) {
            auto& vocab = s.features.node_vocab[i % g.node_cat_fields];
            vocab = std::max(vocab, static_cast<std::size_t>(g.node_cat[i]) + 1);
        }
        for (std::size_t i = 0; i < g.edge_cat.size(); ++i) {
            auto& vocab = s.features.edge_vocab[i % g.edge_cat_fields];
            vocab = std::max(vocab, static_cast<std::size_t>(g.edge_cat[i]) + 1);
        }
    }
    return s;
}

Dataset parse_jsonl(std::istream& in, std::string_view source) {
    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    bool all_integer = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            fail_line(ErrorCode::Parse, source, line_no, e.what());
        }
        try {
            bool integer_target = false;
            ds.graphs.push_back(parse_graph(j, integer_target));
            all_integer = all_integer && integer_target;
        } catch (const Error& e) {
            fail_line(e.code(), source, line_no, e.what());
        } catch (const json::exception& e) {
            fail_line(ErrorCode::Parse, source, line_no, e.what());
        }
    }
    require(!ds.graphs.empty(), ErrorCode::Schema, fmt::format("{}: empty dataset", source));
    // Graphs without edges carry no edge layout; give them the dataset's.
    ds.schema = infer_schema(ds.graphs);
    for (auto& g : ds.graphs) {
        if (g.num_edges() == 0) {
            g.edge_cat_fields = ds.schema.features.edge_vocab.size();
            g.edge_cont_dim = ds.schema.features.edge_cont_dim;
        }
    }
    ds.schema.integer_targets = all_integer;
    return ds;
}

Dataset load_jsonl(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::Io, fmt::format("cannot open dataset '{}'", path));
    return parse_jsonl(in, path);
}

void write_jsonl(std::ostream& out, std::span<const Graph> graphs) {
    for (const auto& g : graphs) {
        json j;
        json nodes = json::array();
        for (std::size_t v = 0; v < g.num_nodes; ++v) {
            nodes.push_back(features_to_json(
                std::span(g.node_cat).subspan(v * g.node_cat_fields, g.node_cat_fields),
                std::span(g.node_cont).subspan(v * g.node_cont_dim, g.node_cont_dim)));
        }
        j["nodes"] = std::move(nodes);
        json edges = json::array(), feats = json::array();
        const bool has_feats = g.edge_cat_fields > 0 || g.edge_cont_dim > 0;
        for (std::size_t e = 0; e + 1 < g.num_edges(); e += 2) {
            require(g.src[e] == g.dst[e + 1] && g.dst[e] == g.src[e + 1], ErrorCode::Schema,
                    "write_jsonl needs edges stored as orientation pairs");
            edges.push_back({g.src[e], g.dst[e]});
            if (has_feats) {
                feats.push_back(features_to_json(
                    std::span(g.edge_cat).subspan(e * g.edge_cat_fields, g.edge_cat_fields),
                    std::span(g.edge_cont).subspan(e * g.edge_cont_dim, g.edge_cont_dim)));
            }
        }
        j["edges"] = std::move(edges);
        if (has_feats) j["edge_feats"] = std::move(feats);
        json target = json::array();
        for (double t : g.target) target.push_back(std::isnan(t) ? json(nullptr) : json(t));
        j["target"] = std::move(target);
        out << j.dump() << '\n';
    }
}

// -- synthetic data ----------------------------------------------------------------

std::string_view to_string(SyntheticKind kind) {
    switch (kind) {
    case SyntheticKind::RingRegression: return "ring-regression";
    case SyntheticKind::TriangleCount: return "triangle-count";
    case SyntheticKind::ComponentParity: return "component-parity";
    }
    return "?";
}

SyntheticKind parse_synthetic_kind(std::string_view name) {
    if (name == "ring-regression") return SyntheticKind::RingRegression;
    if (name == "triangle-count") return SyntheticKind::TriangleCount;
    if (name == "component-parity") return SyntheticKind::ComponentParity;
    fail(ErrorCode::InvalidArgument, fmt::format("unknown synthetic kind '{}'", name));
}

namespace {

std::vector<std::vector<bool>> adjacency(const Graph& g) {
    std::vector<std::vector<bool>> adj(g.num_nodes, std::vector<bool>(g.num_nodes, false));
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const auto u = static_cast<std::size_t>(g.src[e]), v = static_cast<std::size_t>(g.dst[e]);
        if (u != v) adj[u][v] = adj[v][u] = true;
    }
    return adj;
}

Graph labelled_nodes(std::size_t count, Rng& rng) {
    Graph g;
    g.num_nodes = count;
    g.node_cat_fields = 1;
    std::uniform_int_distribution<std::int64_t> label(0, 3);
    for (std::size_t v = 0; v < count; ++v) g.node_cat.push_back(label(rng));
    return g;
}

} // namespace

std::size_t count_triangles(const Graph& g) {
    const auto adj = adjacency(g);
    std::size_t count = 0;
    for (std::size_t a = 0; a < g.num_nodes; ++a)
        for (std::size_t b = a + 1; b < g.num_nodes; ++b)
            for (std::size_t c = b + 1; c < g.num_nodes; ++c)
                if (adj[a][b] && adj[b][c] && adj[a][c]) ++count;
    return count;
}

std::size_t count_components(const Graph& g) {
    std::vector<std::size_t> parent(g.num_nodes);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    std::size_t components = g.num_nodes;
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const auto a = find(static_cast<std::size_t>(g.src[e])), b = find(static_cast<std::size_t>(g.dst[e]));
        if (a != b) {
            parent[a] = b;
            --components;
        }
    }
    return components;
}

std::vector<Graph> generate_synthetic(SyntheticKind kind, std::size_t size, std::uint64_t seed) {
    require(size >= 1, ErrorCode::InvalidArgument, "synthetic dataset size must be at least 1");
    Rng rng = make_rng({seed, 0x53594e54ULL, static_cast<std::uint64_t>(kind)});
    std::uniform_int_distribution<std::size_t> node_count(6, 20);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Graph> graphs;
    graphs.reserve(size);
    for (std::size_t i = 0; i < size; ++i) {
        const std::size_t nv = node_count(rng);
        Graph g = labelled_nodes(nv, rng);
        const auto n64 = static_cast<std::int64_t>(nv);
        switch (kind) {
        case SyntheticKind::RingRegression: {
            for (std::int64_t v = 0; v < n64; ++v) g.add_undirected_edge(v, (v + 1) % n64);
            auto adj = adjacency(g);
            std::uniform_int_distribution<std::size_t> chord_count(0, nv / 2);
            std::uniform_int_distribution<std::int64_t> pick(0, n64 - 1);
            std::size_t chords = 0;
            const std::size_t wanted = chord_count(rng);
            for (std::size_t attempt = 0; attempt < 8 * wanted && chords < wanted; ++attempt) {
                const auto u = pick(rng), v = pick(rng);
                if (u == v || adj[u][v]) continue;
                adj[u][v] = adj[v][u] = true;
                g.add_undirected_edge(u, v);
                ++chords;
            }
            g.target = {static_cast<double>(chords)};
            break;
        }
        case SyntheticKind::TriangleCount: {
            // Mean degree between 1.5 and 3 keeps counts small.
            const double p = (1.5 + 1.5 * unit(rng)) / static_cast<double>(nv - 1);
            for (std::int64_t u = 0; u < n64; ++u)
                for (std::int64_t v = u + 1; v < n64; ++v)
                    if (unit(rng) < p) g.add_undirected_edge(u, v);
            g.target = {static_cast<double>(count_triangles(g))};
            break;
        }
        case SyntheticKind::ComponentParity: {
            for (std::int64_t v = 1; v < n64; ++v) {
                if (unit(rng) < 0.8) {
                    std::uniform_int_distribution<std::int64_t> parent(0, v - 1);
                    g.add_undirected_edge(parent(rng), v);
                }
            }
            g.target = {static_cast<double>(count_components(g) % 2)};
            break;
        }
        }
        graphs.push_back(std::move(g));
    }
    return graphs;
}

SplitIndices split_indices(std::size_t count, double train_fraction, double val_fraction, std::uint64_t seed) {
    require(train_fraction > 0.0 && val_fraction >= 0.0 && train_fraction + val_fraction <= 1.0 + 1e-12,
            ErrorCode::InvalidArgument, "split fractions must be non-negative with a positive train share");
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng({seed, 0x53504c54ULL});
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(train_fraction * count)));
    const auto n_val = std::min(count - std::min(count, n_train),
                                static_cast<std::size_t>(std::llround(val_fraction * count)));
    SplitIndices s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, count)));
    s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(s.train.size()),
                 order.begin() + static_cast<std::ptrdiff_t>(s.train.size() + n_val));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(s.train.size() + n_val), order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

} // namespace phc
