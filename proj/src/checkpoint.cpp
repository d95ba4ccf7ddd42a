#include "phc/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <fmt/format.h>

namespace phc {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'H', 'C', 'C', 'K', 'P', 'T', '\0'};

template <class T>
void put_raw(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_string(std::ostream& out, std::string_view s) {
    put_raw<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
public:
    Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

    template <class T>
    T raw() {
        T value{};
        read(reinterpret_cast<char*>(&value), sizeof(T));
        return value;
    }

    std::string string(std::uint64_t limit) {
        const auto size = raw<std::uint64_t>();
        require(size <= limit, ErrorCode::Parse, fmt::format("{}: implausible string length {}", path_, size));
        std::string s(size, '\0');
        read(s.data(), size);
        return s;
    }

    void read(char* dst, std::size_t size) {
        in_.read(dst, static_cast<std::streamsize>(size));
        require(static_cast<std::size_t>(in_.gcount()) == size, ErrorCode::Parse,
                fmt::format("{}: truncated checkpoint", path_));
    }

private:
    std::istream& in_;
    std::string path_;
};

} // namespace

const CheckpointEntry* Checkpoint::find(std::string_view name) const {
    auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.name == name; });
    return it == entries.end() ? nullptr : &*it;
}

const CheckpointEntry& Checkpoint::get(std::string_view name) const {
    const auto* e = find(name);
    require(e != nullptr, ErrorCode::Schema, fmt::format("checkpoint has no entry '{}'", name));
    return *e;
}

void Checkpoint::put(std::string name, Shape shape, std::vector<double> data) {
    require(shape_numel(shape) == data.size(), ErrorCode::ShapeMismatch,
            fmt::format("checkpoint entry '{}' has {} values for shape {}", name, data.size(), shape_to_string(shape)));
    require(find(name) == nullptr, ErrorCode::InvalidArgument, fmt::format("duplicate checkpoint entry '{}'", name));
    entries.push_back({std::move(name), std::move(shape), std::move(data)});
}

double Checkpoint::scalar(std::string_view name) const {
    const auto& e = get(name);
    require(e.data.size() == 1, ErrorCode::Schema, fmt::format("checkpoint entry '{}' is not a scalar", name));
    return e.data[0];
}

void Checkpoint::put_state(const TensorList& state) {
    for (const auto& t : state) {
        const auto v = t.tensor.data();
        put(t.name, t.tensor.shape(), std::vector<double>(v.begin(), v.end()));
    }
}

void Checkpoint::load_state(const TensorList& state) const {
    for (const auto& t : state) {
        const auto& e = get(t.name);
        require(e.shape == t.tensor.shape(), ErrorCode::Schema,
                fmt::format("checkpoint entry '{}' has shape {} but the model expects {}", t.name,
                            shape_to_string(e.shape), shape_to_string(t.tensor.shape())));
        auto dst = Tensor(t.tensor).mutable_data();
        std::copy(e.data.begin(), e.data.end(), dst.begin());
    }
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const std::filesystem::path target(path);
    if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
    const auto tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(out), ErrorCode::Io, fmt::format("cannot write checkpoint '{}'", tmp));
        out.write(kMagic, sizeof kMagic);
        put_raw<std::uint32_t>(out, Checkpoint::kVersion);
        put_string(out, ckpt.config_text);
        put_raw<std::uint64_t>(out, ckpt.entries.size());
        for (const auto& e : ckpt.entries) {
            put_string(out, e.name);
            put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
            for (auto d : e.shape) put_raw<std::uint64_t>(out, d);
            out.write(reinterpret_cast<const char*>(e.data.data()),
                      static_cast<std::streamsize>(e.data.size() * sizeof(double)));
        }
        require(static_cast<bool>(out), ErrorCode::Io, fmt::format("error writing checkpoint '{}'", tmp));
    }
    std::filesystem::rename(tmp, target);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, fmt::format("cannot open checkpoint '{}'", path));
    Reader r(in, path);
    char magic[sizeof kMagic];
    r.read(magic, sizeof magic);
    require(std::memcmp(magic, kMagic, sizeof kMagic) == 0, ErrorCode::Parse, fmt::format("{}: not a checkpoint", path));
    const auto version = r.raw<std::uint32_t>();
    require(version == Checkpoint::kVersion, ErrorCode::Parse,
            fmt::format("{}: unsupported checkpoint version {}", path, version));
    Checkpoint ckpt;
    ckpt.config_text = r.string(1u << 24);
    const auto count = r.raw<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        e.name = r.string(4096);
        const auto rank = r.raw<std::uint32_t>();
        require(rank >= 1 && rank <= 8, ErrorCode::Parse, fmt::format("{}: bad rank {} for '{}'", path, rank, e.name));
        for (std::uint32_t a = 0; a < rank; ++a) e.shape.push_back(r.raw<std::uint64_t>());
        const auto numel = shape_numel(e.shape);
        require(numel <= (std::size_t{1} << 32), ErrorCode::Parse, fmt::format("{}: oversized entry '{}'", path, e.name));
        e.data.resize(numel);
        r.read(reinterpret_cast<char*>(e.data.data()), numel * sizeof(double));
        ckpt.entries.push_back(std::move(e));
    }
    return ckpt;
}

} // namespace phc
