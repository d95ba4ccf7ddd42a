#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "phc/graph.hpp"
#include "phc/layers.hpp"

namespace phc {

enum class Aggregator { Sum, Mean, Min, Max, Softmax };
enum class SkipMode { Initial, Previous };

std::string_view to_string(Aggregator kind);
Aggregator parse_aggregator(std::string_view name);
std::string_view to_string(SkipMode mode);
SkipMode parse_skip_mode(std::string_view name);

/// Categorical vocabularies and continuous widths of node and edge inputs.
struct FeatureSchema {
    std::vector<std::size_t> node_vocab;
    std::size_t node_cont_dim = 0;
    std::vector<std::size_t> edge_vocab;
    std::size_t edge_cont_dim = 0;

    bool has_edge_features() const { return !edge_vocab.empty() || edge_cont_dim > 0; }
    friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;
};

struct ModelConfig {
    std::size_t n = 1;
    std::size_t hidden = 104;
    std::size_t layers = 14;
    bool mp_mlp = true; // two PHM layers per message-passing MLP instead of one
    Aggregator aggregator = Aggregator::Sum;
    double softmax_tau = 1.0;
    SkipMode skip = SkipMode::Previous;
    double mp_dropout = 0.0;
    std::vector<std::size_t> dn_widths{100, 50};
    std::vector<double> dn_dropout{0.2, 0.1};
    DropoutMode dropout_mode = DropoutMode::Component;
    bool batchnorm = true;
    /// Empty selects complex for n = 2, quaternion for n = 4 and the
    /// shifted identity otherwise.
    std::optional<ContributionScheme> contribution_init;
    WeightInit weight_init = WeightInit::PhcNormal;
    bool freeze_contributions = false;
    std::size_t out_dim = 1;
    bool node_level = false;
    FeatureSchema features;

    ContributionScheme resolved_contribution_init() const;
    void validate() const;
};

/// Per-call context: train/eval phase and the stream feeding dropout masks.
struct ForwardContext {
    Mode mode = Mode::Eval;
    Rng* rng = nullptr;
};

/// Sums learnable lookup rows over categorical fields and adds a dense
/// projection of continuous features; output rows are n concatenated
/// m-sized components.
class FeatureEncoder {
public:
    FeatureEncoder() = default;
    FeatureEncoder(std::span<const std::size_t> vocab, std::size_t cont_dim, std::size_t width, Rng& rng);

    bool empty() const { return tables_.empty() && !continuous_; }
    std::size_t width() const { return width_; }
    const std::vector<Tensor>& tables() const { return tables_; }
    std::vector<Tensor>& tables() { return tables_; }
    std::optional<Dense>& continuous() { return continuous_; }

    /// cat: rows x fields, cont: rows x cont_dim.
    Tensor encode(std::span<const std::int64_t> cat, std::size_t fields, std::span<const double> cont,
                  std::size_t cont_dim, std::size_t rows) const;

    std::size_t num_trainable() const;
    void collect(TensorList& out, const std::string& prefix) const;

private:
    std::size_t width_ = 0;
    std::vector<Tensor> tables_;
    std::optional<Dense> continuous_;
};

/// Message for every node: reduction over incoming edges (u -> v) of
/// z_uv = h_u + e_uv. `edge_emb` may be undefined (no edge features); `tau`
/// is only read by the softmax kind. Nodes without incoming edges get zero.
Tensor aggregate(const Tensor& h, const Tensor& edge_emb, std::span<const std::int64_t> src,
                 std::span<const std::int64_t> dst, Aggregator kind, const Tensor& tau);

/// h_anchor + h_tilde.
Tensor skip_connect(const Tensor& anchor, const Tensor& tilde);

/// One PHM block of the update MLP: PHM -> batchnorm -> ReLU -> dropout.
struct PhmBlock {
    PhmLinear phm;
    std::optional<ComponentBatchNorm> norm;
    double dropout = 0.0;

    Tensor forward(const Tensor& x, DropoutMode mode, ForwardContext& ctx);
};

class MessagePassingLayer {
public:
    MessagePassingLayer() = default;
    MessagePassingLayer(const ModelConfig& cfg, std::uint64_t seed, std::size_t index);

    /// Edge embeddings for this layer; undefined if there are no edge features.
    Tensor encode_edges(const GraphBatch& batch) const;
    /// MLP(h_prev + m).
    Tensor update(const Tensor& h_prev, const Tensor& message, DropoutMode mode, ForwardContext& ctx);
    /// update(h_prev, aggregate(h_prev, edges)); the skip connection is applied by the caller.
    Tensor forward(const Tensor& h_prev, const GraphBatch& batch, DropoutMode mode, ForwardContext& ctx);

    Aggregator aggregator() const { return aggregator_; }
    std::vector<PhmBlock>& blocks() { return blocks_; }
    const std::vector<PhmBlock>& blocks() const { return blocks_; }
    const Tensor& tau() const { return tau_; }
    FeatureEncoder& edge_encoder() { return edge_encoder_; }

    std::size_t num_trainable() const;
    void collect(TensorList& out, const std::string& prefix) const;

private:
    Aggregator aggregator_ = Aggregator::Sum;
    FeatureEncoder edge_encoder_;
    std::vector<PhmBlock> blocks_;
    Tensor tau_;
};

/// Soft-attention readout: W = sigmoid(head(H)) of width m, broadcast over
/// the n components and summed per graph.
Tensor soft_attention_pool(const Tensor& h, const Dense& head, std::size_t n,
                           std::span<const std::int64_t> graph_id, std::size_t num_graphs);

class PhcModel {
public:
    PhcModel() = default;
    PhcModel(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    Tensor encode_nodes(const GraphBatch& batch) const;
    /// H^(L) after all message-passing layers and skip connections.
    Tensor node_embeddings(const GraphBatch& batch, ForwardContext& ctx);
    /// Graph embeddings h_G.
    Tensor pool(const Tensor& h_final, const GraphBatch& batch) const;
    /// Downstream PHM MLP followed by the real transform.
    Tensor predict(const Tensor& h_graph, ForwardContext& ctx);
    /// Per-node logits: real transform of H^(L) without pooling.
    Tensor node_predict(const Tensor& h_final) const;

    /// Logits of shape (num_graphs, out_dim), or (num_nodes, out_dim) for
    /// node-level models.
    Tensor forward(const GraphBatch& batch, ForwardContext& ctx);

    std::vector<MessagePassingLayer>& mp_layers() { return layers_; }
    std::vector<PhmBlock>& downstream() { return downstream_; }
    Dense& pool_head() { return pool_head_; }
    Dense& output_head() { return output_head_; }
    FeatureEncoder& node_encoder() { return node_encoder_; }

    /// Every PHM layer in a fixed order.
    std::vector<const PhmLinear*> phm_layers() const;
    /// Parameters and buffers with stable names (the checkpoint layout).
    TensorList state() const;
    /// Trainable tensors only.
    TensorList parameters() const;
    std::size_t count_parameters() const;

private:
    ModelConfig cfg_;
    FeatureEncoder node_encoder_;
    std::vector<MessagePassingLayer> layers_;
    Dense pool_head_;
    std::vector<PhmBlock> downstream_;
    Dense output_head_;
};

} // namespace phc
