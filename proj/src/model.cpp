#include "phc/model.hpp"

#include <cmath>

#include <fmt/format.h>

namespace phc {

namespace {

// Disjoint layer-index ranges for the random streams of each sub-module.
constexpr std::uint64_t kNodeEncoderStream = 0x4e4f4445ULL;
constexpr std::uint64_t kEdgeEncoderStream = 0x45444745ULL;
constexpr std::uint64_t kHeadStream = 0x48454144ULL;
constexpr std::uint64_t kMpPhmBase = 1000;
constexpr std::uint64_t kDownstreamPhmBase = 900000;

} // namespace

std::string_view to_string(Aggregator kind) {
    switch (kind) {
    case Aggregator::Sum: return "sum";
    case Aggregator::Mean: return "mean";
    case Aggregator::Min: return "min";
    case Aggregator::Max: return "max";
    case Aggregator::Softmax: return "softmax";
    }
    return "?";
}

Aggregator parse_aggregator(std::string_view name) {
    if (name == "sum") return Aggregator::Sum;
    if (name == "mean") return Aggregator::Mean;
    if (name == "min") return Aggregator::Min;
    if (name == "max") return Aggregator::Max;
    if (name == "softmax") return Aggregator::Softmax;
    fail(ErrorCode::InvalidArgument, fmt::format("unknown aggregator '{}'", name));
}

std::string_view to_string(SkipMode mode) { return mode == SkipMode::Initial ? "initial" : "previous"; }

SkipMode parse_skip_mode(std::string_view name) {
    if (name == "initial") return SkipMode::Initial;
    if (name == "previous") return SkipMode::Previous;
    fail(ErrorCode::InvalidArgument, fmt::format("unknown skip mode '{}'", name));
}

// -- ModelConfig ---------------------------------------------------------------

ContributionScheme ModelConfig::resolved_contribution_init() const {
    if (contribution_init) return *contribution_init;
    if (n == 2) return ContributionScheme::Complex;
    if (n == 4) return ContributionScheme::Quaternion;
    return ContributionScheme::ShiftedIdentity;
}

void ModelConfig::validate() const {
    require(n >= 1, ErrorCode::InvalidArgument, "model.n must be positive");
    require(hidden > 0 && hidden % n == 0, ErrorCode::InvalidArgument,
            fmt::format("model.hidden={} must be a positive multiple of n={}", hidden, n));
    require(layers >= 1, ErrorCode::InvalidArgument, "model.layers must be at least 1");
    require(mp_dropout >= 0.0 && mp_dropout < 1.0, ErrorCode::InvalidArgument,
            "model.mp_dropout must lie in [0, 1)");
    require(dn_widths.size() == dn_dropout.size(), ErrorCode::InvalidArgument,
            "model.dn_widths and model.dn_dropout must have equal length");
    for (auto w : dn_widths) {
        require(w > 0 && w % n == 0, ErrorCode::InvalidArgument,
                fmt::format("downstream width {} must be a positive multiple of n={}", w, n));
    }
    for (auto p : dn_dropout) {
        require(p >= 0.0 && p < 1.0, ErrorCode::InvalidArgument, "model.dn_dropout entries must lie in [0, 1)");
    }
    require(out_dim >= 1, ErrorCode::InvalidArgument, "model.out_dim must be positive");
    require(!features.node_vocab.empty() || features.node_cont_dim > 0, ErrorCode::Schema,
            "model has no node input features");
    for (auto v : features.node_vocab) require(v > 0, ErrorCode::Schema, "empty node vocabulary");
    for (auto v : features.edge_vocab) require(v > 0, ErrorCode::Schema, "empty edge vocabulary");
    const auto scheme = resolved_contribution_init();
    require(scheme != ContributionScheme::Complex || n == 2, ErrorCode::InvalidArgument,
            "complex contributions need n = 2");
    require(scheme != ContributionScheme::Quaternion || n == 4, ErrorCode::InvalidArgument,
            "quaternion contributions need n = 4");
}

// -- FeatureEncoder -------------------------------------------------------------

FeatureEncoder::FeatureEncoder(std::span<const std::size_t> vocab, std::size_t cont_dim, std::size_t width,
                               Rng& rng)
    : width_(width) {
    for (auto v : vocab) {
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(v + width)));
        std::vector<double> table(v * width);
        for (auto& x : table) x = normal(rng);
        tables_.push_back(Tensor::from({v, width}, std::move(table), true));
    }
    if (cont_dim > 0) continuous_ = Dense::glorot(cont_dim, width, rng);
}

Tensor FeatureEncoder::encode(std::span<const std::int64_t> cat, std::size_t fields,
                              std::span<const double> cont, std::size_t cont_dim, std::size_t rows) const {
    require(fields == tables_.size(), ErrorCode::Schema,
            fmt::format("encoder expects {} categorical fields, got {}", tables_.size(), fields));
    const std::size_t expected_cont = continuous_ ? continuous_->in_features() : 0;
    require(cont_dim == expected_cont, ErrorCode::Schema,
            fmt::format("encoder expects {} continuous features, got {}", expected_cont, cont_dim));
    require(rows > 0, ErrorCode::InvalidArgument, "encoder called with zero rows");
    std::vector<Tensor> terms;
    std::vector<std::int64_t> column(rows);
    for (std::size_t f = 0; f < fields; ++f) {
        const std::size_t vocab = tables_[f].dim(0);
        for (std::size_t r = 0; r < rows; ++r) {
            column[r] = cat[r * fields + f];
            if (!(column[r] >= 0 && static_cast<std::size_t>(column[r]) < vocab))
                fail(ErrorCode::OutOfRange,
                     fmt::format("categorical index {} of field {} is outside the vocabulary of size {}", column[r],
                                 f, vocab));
        }
        terms.push_back(ops::gather_rows(tables_[f], column));
    }
    if (continuous_) {
        Tensor x = Tensor::from({rows, cont_dim}, std::vector<double>(cont.begin(), cont.end()));
        terms.push_back(continuous_->forward(x));
    }
    require(!terms.empty(), ErrorCode::Schema, "encoder has no inputs");
    return terms.size() == 1 ? terms[0] : ops::add_n(terms);
}

std::size_t FeatureEncoder::num_trainable() const {
    std::size_t count = continuous_ ? continuous_->num_trainable() : 0;
    for (const auto& t : tables_) count += t.numel();
    return count;
}

void FeatureEncoder::collect(TensorList& out, const std::string& prefix) const {
    for (std::size_t f = 0; f < tables_.size(); ++f) {
        out.push_back({fmt::format("{}.table{}", prefix, f), tables_[f], ParamKind::Other});
    }
    if (continuous_) continuous_->collect(out, prefix + ".cont");
}

// -- aggregation ---------------------------------------------------------------

Tensor aggregate(const Tensor& h, const Tensor& edge_emb, std::span<const std::int64_t> src,
                 std::span<const std::int64_t> dst, Aggregator kind, const Tensor& tau) {
    require(h.rank() == 2, ErrorCode::ShapeMismatch, "aggregate expects node embeddings (|V|, k)");
    require(src.size() == dst.size(), ErrorCode::ShapeMismatch, "edge endpoint arrays differ in length");
    const std::size_t nodes = h.dim(0), width = h.dim(1);
    if (src.empty()) return Tensor::zeros({nodes, width});
    Tensor z = ops::gather_rows(h, src);
    if (edge_emb.defined()) {
        require(edge_emb.shape() == z.shape(), ErrorCode::ShapeMismatch,
                fmt::format("edge embeddings {} do not match messages {}", shape_to_string(edge_emb.shape()),
                            shape_to_string(z.shape())));
        z = ops::add(z, edge_emb);
    }
    switch (kind) {
    case Aggregator::Sum: return ops::segment_reduce(z, dst, nodes, ops::SegmentReduce::Sum);
    case Aggregator::Mean: return ops::segment_reduce(z, dst, nodes, ops::SegmentReduce::Mean);
    case Aggregator::Min: return ops::segment_reduce(z, dst, nodes, ops::SegmentReduce::Min);
    case Aggregator::Max: return ops::segment_reduce(z, dst, nodes, ops::SegmentReduce::Max);
    case Aggregator::Softmax: {
        require(tau.defined(), ErrorCode::InvalidArgument, "softmax aggregation needs a temperature");
        Tensor weights = ops::segment_softmax(ops::mul_scalar(z, tau), dst, nodes);
        return ops::segment_sum(ops::mul(weights, z), dst, nodes);
    }
    }
    fail(ErrorCode::InvalidArgument, "unknown aggregator");
}

Tensor skip_connect(const Tensor& anchor, const Tensor& tilde) { return ops::add(anchor, tilde); }

// -- PhmBlock ---------------------------------------------------------------------

Tensor PhmBlock::forward(const Tensor& x, DropoutMode mode, ForwardContext& ctx) {
    Tensor y = phm.forward(x);
    if (norm) y = norm->forward(y, ctx.mode);
    y = ops::relu(y);
    if (dropout > 0.0 && ctx.mode == Mode::Train) {
        require(ctx.rng != nullptr, ErrorCode::InvalidArgument, "train-mode dropout needs a random stream");
        const std::size_t b = y.dim(0), n = phm.n(), m = y.dim(1) / n;
        y = ops::reshape(hc_dropout(ops::reshape(y, {b, n, m}), dropout, mode, ctx.mode, *ctx.rng), {b, n * m});
    }
    return y;
}

// -- MessagePassingLayer ---------------------------------------------------------

MessagePassingLayer::MessagePassingLayer(const ModelConfig& cfg, std::uint64_t seed, std::size_t index)
    : aggregator_(cfg.aggregator) {
    if (cfg.features.has_edge_features()) {
        Rng rng = make_rng({seed, kEdgeEncoderStream, index});
        edge_encoder_ = FeatureEncoder(cfg.features.edge_vocab, cfg.features.edge_cont_dim, cfg.hidden, rng);
    }
    const PhmInit init{cfg.weight_init, cfg.resolved_contribution_init(), true, cfg.freeze_contributions};
    const std::size_t depth = cfg.mp_mlp ? 2 : 1;
    for (std::size_t j = 0; j < depth; ++j) {
        PhmBlock block;
        block.phm = init_phm(cfg.n, cfg.hidden, cfg.hidden, init, seed, kMpPhmBase + 2 * index + j);
        if (cfg.batchnorm) block.norm = ComponentBatchNorm(cfg.n, cfg.hidden / cfg.n);
        block.dropout = cfg.mp_dropout;
        blocks_.push_back(std::move(block));
    }
    if (aggregator_ == Aggregator::Softmax) tau_ = Tensor::scalar(cfg.softmax_tau, true);
}

Tensor MessagePassingLayer::encode_edges(const GraphBatch& batch) const {
    if (edge_encoder_.empty() || batch.num_edges() == 0) return {};
    return edge_encoder_.encode(batch.edge_cat, batch.edge_cat_fields, batch.edge_cont, batch.edge_cont_dim,
                                batch.num_edges());
}

Tensor MessagePassingLayer::update(const Tensor& h_prev, const Tensor& message, DropoutMode mode,
                                   ForwardContext& ctx) {
    Tensor x = ops::add(h_prev, message);
    for (auto& block : blocks_) x = block.forward(x, mode, ctx);
    return x;
}

Tensor MessagePassingLayer::forward(const Tensor& h_prev, const GraphBatch& batch, DropoutMode mode,
                                    ForwardContext& ctx) {
    Tensor message = aggregate(h_prev, encode_edges(batch), batch.src, batch.dst, aggregator_, tau_);
    return update(h_prev, message, mode, ctx);
}

std::size_t MessagePassingLayer::num_trainable() const {
    std::size_t count = edge_encoder_.num_trainable() + (tau_.defined() ? 1 : 0);
    for (const auto& b : blocks_) count += b.phm.num_trainable() + (b.norm ? b.norm->num_trainable() : 0);
    return count;
}

void MessagePassingLayer::collect(TensorList& out, const std::string& prefix) const {
    if (!edge_encoder_.empty()) edge_encoder_.collect(out, prefix + ".edge_enc");
    for (std::size_t j = 0; j < blocks_.size(); ++j) {
        const auto block_prefix = fmt::format("{}.mlp.{}", prefix, j);
        blocks_[j].phm.collect(out, block_prefix);
        if (blocks_[j].norm) blocks_[j].norm->collect(out, block_prefix + ".bn");
    }
    if (tau_.defined()) out.push_back({prefix + ".tau", tau_, ParamKind::Other});
}

// -- pooling -------------------------------------------------------------------------

Tensor soft_attention_pool(const Tensor& h, const Dense& head, std::size_t n,
                           std::span<const std::int64_t> graph_id, std::size_t num_graphs) {
    require(h.rank() == 2 && head.out_features() * n == h.dim(1), ErrorCode::ShapeMismatch,
            fmt::format("attention head of width {} cannot gate {} features with n={}", head.out_features(),
                        h.dim(1), n));
    Tensor weights = ops::sigmoid(head.forward(h));
    return ops::segment_sum(ops::mul(ops::tile_cols(weights, n), h), graph_id, num_graphs);
}

// -- PhcModel ------------------------------------------------------------------------

PhcModel::PhcModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    {
        Rng rng = make_rng({seed, kNodeEncoderStream});
        node_encoder_ = FeatureEncoder(cfg_.features.node_vocab, cfg_.features.node_cont_dim, cfg_.hidden, rng);
    }
    for (std::size_t l = 0; l < cfg_.layers; ++l) layers_.emplace_back(cfg_, seed, l);

    Rng head_rng = make_rng({seed, kHeadStream});
    if (cfg_.node_level) {
        output_head_ = Dense::glorot(cfg_.hidden, cfg_.out_dim, head_rng);
        return;
    }
    pool_head_ = Dense::glorot(cfg_.hidden, cfg_.hidden / cfg_.n, head_rng);
    const PhmInit init{cfg_.weight_init, cfg_.resolved_contribution_init(), true, cfg_.freeze_contributions};
    std::size_t width = cfg_.hidden;
    for (std::size_t j = 0; j < cfg_.dn_widths.size(); ++j) {
        PhmBlock block;
        block.phm = init_phm(cfg_.n, cfg_.dn_widths[j], width, init, seed, kDownstreamPhmBase + j);
        block.dropout = cfg_.dn_dropout[j];
        downstream_.push_back(std::move(block));
        width = cfg_.dn_widths[j];
    }
    output_head_ = Dense::glorot(width, cfg_.out_dim, head_rng);
}

Tensor PhcModel::encode_nodes(const GraphBatch& batch) const {
    return node_encoder_.encode(batch.node_cat, batch.node_cat_fields, batch.node_cont, batch.node_cont_dim,
                                batch.num_nodes);
}

Tensor PhcModel::node_embeddings(const GraphBatch& batch, ForwardContext& ctx) {
    const Tensor h0 = encode_nodes(batch);
    Tensor h = h0;
    for (auto& layer : layers_) {
        Tensor tilde = layer.forward(h, batch, cfg_.dropout_mode, ctx);
        h = skip_connect(cfg_.skip == SkipMode::Initial ? h0 : h, tilde);
    }
    return h;
}

Tensor PhcModel::pool(const Tensor& h_final, const GraphBatch& batch) const {
    require(!cfg_.node_level, ErrorCode::InvalidArgument, "node-level models have no graph pooling");
    return soft_attention_pool(h_final, pool_head_, cfg_.n, batch.graph_id, batch.num_graphs);
}

Tensor PhcModel::predict(const Tensor& h_graph, ForwardContext& ctx) {
    Tensor x = h_graph;
    for (auto& block : downstream_) x = block.forward(x, cfg_.dropout_mode, ctx);
    return output_head_.forward(x);
}

Tensor PhcModel::node_predict(const Tensor& h_final) const { return output_head_.forward(h_final); }

Tensor PhcModel::forward(const GraphBatch& batch, ForwardContext& ctx) {
    Tensor h = node_embeddings(batch, ctx);
    if (cfg_.node_level) return node_predict(h);
    return predict(pool(h, batch), ctx);
}

std::vector<const PhmLinear*> PhcModel::phm_layers() const {
    std::vector<const PhmLinear*> out;
    for (const auto& layer : layers_)
        for (const auto& b : layer.blocks()) out.push_back(&b.phm);
    for (const auto& b : downstream_) out.push_back(&b.phm);
    return out;
}

TensorList PhcModel::state() const {
    TensorList out;
    node_encoder_.collect(out, "node_enc");
    for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect(out, fmt::format("mp.{}", l));
    if (!cfg_.node_level) {
        pool_head_.collect(out, "pool");
        for (std::size_t j = 0; j < downstream_.size(); ++j) downstream_[j].phm.collect(out, fmt::format("dn.{}", j));
    }
    output_head_.collect(out, "head");
    return out;
}

TensorList PhcModel::parameters() const {
    TensorList out;
    for (auto& t : state()) {
        if (is_trainable(t)) out.push_back(std::move(t));
    }
    return out;
}

std::size_t PhcModel::count_parameters() const {
    std::size_t count = 0;
    for (const auto& t : parameters()) count += t.tensor.numel();
    return count;
}

} // namespace phc
