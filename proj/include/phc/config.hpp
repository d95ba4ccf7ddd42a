#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "phc/dataset.hpp"
#include "phc/model.hpp"
#include "phc/training.hpp"

namespace phc {

struct DataConfig {
    std::string path;
    double train_fraction = 0.8;
    double val_fraction = 0.1;
    double test_fraction = 0.1;
};

/// Everything a run needs. The text form is one `key = value` per line with
/// dotted section keys; '#' starts a comment. Lists are comma separated.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    std::string output_dir = "runs/phc";
    std::uint64_t seed = 0;
    /// When set, the feature schema and output width come from the training
    /// data; otherwise from model.node_vocab and friends.
    bool infer_features = true;
    bool infer_out_dim = true;

    void validate() const;
    /// Fills inferred fields from the training data.
    void resolve(const Dataset& data);
};

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

} // namespace phc
