#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "phc/layers.hpp"

namespace phc {

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

/// Flat named-tensor file: magic "PHCCKPT\0", u32 version, the serialized run
/// config, then entries of (name, rank, extents, f64 row-major payload). All
/// integers and floats are little-endian.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::string config_text;
    std::vector<CheckpointEntry> entries;

    const CheckpointEntry* find(std::string_view name) const;
    const CheckpointEntry& get(std::string_view name) const;
    void put(std::string name, Shape shape, std::vector<double> data);
    void put_scalar(std::string name, double value) { put(std::move(name), {1}, {value}); }
    double scalar(std::string_view name) const;

    /// Adds every tensor of `state` under its name.
    void put_state(const TensorList& state);
    /// Copies stored values into `state`; each name must exist with a matching shape.
    void load_state(const TensorList& state) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

} // namespace phc
