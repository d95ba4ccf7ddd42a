#include "phc/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

namespace phc {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view v) {
    std::vector<std::string_view> out;
    if (trim(v).empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto comma = v.find(',', start);
        out.push_back(trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::size_t to_size(std::string_view v) {
    std::size_t out = 0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    require(ec == std::errc{} && ptr == end, ErrorCode::Parse, fmt::format("'{}' is not a non-negative integer", v));
    return out;
}

std::uint64_t to_u64(std::string_view v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    require(ec == std::errc{} && ptr == end, ErrorCode::Parse, fmt::format("'{}' is not a non-negative integer", v));
    return out;
}

double to_double(std::string_view v) {
    if (v == "none") return std::numeric_limits<double>::quiet_NaN();
    const std::string s(v);
    char* end = nullptr;
    const double out = std::strtod(s.c_str(), &end);
    require(!s.empty() && end == s.c_str() + s.size(), ErrorCode::Parse, fmt::format("'{}' is not a number", v));
    return out;
}

bool to_bool(std::string_view v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(ErrorCode::Parse, fmt::format("'{}' is not a boolean", v));
}

std::vector<std::size_t> to_size_list(std::string_view v) {
    std::vector<std::size_t> out;
    for (auto item : split_list(v)) out.push_back(to_size(item));
    return out;
}

std::vector<double> to_double_list(std::string_view v) {
    std::vector<double> out;
    for (auto item : split_list(v)) out.push_back(to_double(item));
    return out;
}

std::string fmt_double(double x) { return std::isnan(x) ? "none" : fmt::format("{:.17g}", x); }

template <class T, class F>
std::string join(const std::vector<T>& v, F f) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
    return out;
}

void apply(RunConfig& cfg, std::string_view key, std::string_view value) {
    auto& m = cfg.model;
    auto& t = cfg.train;
    auto& f = m.features;
    auto explicit_features = [&] { cfg.infer_features = false; };
    if (key == "seed") cfg.seed = to_u64(value);
    else if (key == "output.dir") cfg.output_dir = std::string(value);
    else if (key == "data.path") cfg.data.path = std::string(value);
    else if (key == "data.train_fraction") cfg.data.train_fraction = to_double(value);
    else if (key == "data.val_fraction") cfg.data.val_fraction = to_double(value);
    else if (key == "data.test_fraction") cfg.data.test_fraction = to_double(value);
    else if (key == "model.n") m.n = to_size(value);
    else if (key == "model.hidden") m.hidden = to_size(value);
    else if (key == "model.layers") m.layers = to_size(value);
    else if (key == "model.mp_mlp") m.mp_mlp = to_bool(value);
    else if (key == "model.aggregator") m.aggregator = parse_aggregator(value);
    else if (key == "model.softmax_tau") m.softmax_tau = to_double(value);
    else if (key == "model.skip") m.skip = parse_skip_mode(value);
    else if (key == "model.mp_dropout") m.mp_dropout = to_double(value);
    else if (key == "model.dn_widths") m.dn_widths = to_size_list(value);
    else if (key == "model.dn_dropout") m.dn_dropout = to_double_list(value);
    else if (key == "model.dropout_mode") m.dropout_mode = parse_dropout_mode(value);
    else if (key == "model.batchnorm") m.batchnorm = to_bool(value);
    else if (key == "model.contribution_init") {
        if (value == "auto") m.contribution_init.reset();
        else m.contribution_init = parse_contribution_scheme(value);
    } else if (key == "model.weight_init") m.weight_init = parse_weight_init(value);
    else if (key == "model.freeze_contributions") m.freeze_contributions = to_bool(value);
    else if (key == "model.node_level") m.node_level = to_bool(value);
    else if (key == "model.out_dim") {
        m.out_dim = to_size(value);
        cfg.infer_out_dim = false;
    } else if (key == "model.node_vocab") {
        f.node_vocab = to_size_list(value);
        explicit_features();
    } else if (key == "model.node_cont_dim") {
        f.node_cont_dim = to_size(value);
        explicit_features();
    } else if (key == "model.edge_vocab") {
        f.edge_vocab = to_size_list(value);
        explicit_features();
    } else if (key == "model.edge_cont_dim") {
        f.edge_cont_dim = to_size(value);
        explicit_features();
    } else if (key == "train.lr") t.lr = to_double(value);
    else if (key == "train.lambda1") t.lambda1 = to_double(value);
    else if (key == "train.lambda2") t.lambda2 = to_double(value);
    else if (key == "train.norm_p") t.norm_p = to_double(value);
    else if (key == "train.plateau_factor") t.plateau_factor = to_double(value);
    else if (key == "train.patience") t.patience = to_size(value);
    else if (key == "train.min_lr") t.min_lr = to_double(value);
    else if (key == "train.max_epochs") t.max_epochs = to_size(value);
    else if (key == "train.clip_norm") t.clip_norm = to_double(value);
    else if (key == "train.batch_size") t.batch_size = to_size(value);
    else if (key == "train.eval_batch_size") t.eval_batch_size = to_size(value);
    else if (key == "train.task") t.task = parse_task_kind(value);
    else if (key == "train.metric") {
        if (value == "auto") t.metric.reset();
        else t.metric = parse_metric_kind(value);
    } else if (key == "train.stop_train_metric") t.stop_train_metric = to_double(value);
    else fail(ErrorCode::Parse, fmt::format("unknown key '{}'", key));
}

} // namespace

void RunConfig::validate() const {
    ModelConfig m = model;
    if (infer_features) m.features = FeatureSchema{{1}, 0, {}, 0};
    if (infer_out_dim) m.out_dim = 1;
    m.validate();
    train.validate();
    const double total = data.train_fraction + data.val_fraction + data.test_fraction;
    require(data.train_fraction > 0.0 && data.val_fraction >= 0.0 && data.test_fraction >= 0.0 &&
                std::fabs(total - 1.0) < 1e-9,
            ErrorCode::InvalidArgument, fmt::format("split fractions must be non-negative and sum to 1, got {}", total));
    require(!model.node_level, ErrorCode::InvalidArgument,
            "node-level models are library-only; the training loop expects graph targets");
}

void RunConfig::resolve(const Dataset& data) {
    if (infer_features) model.features = data.schema.features;
    if (infer_out_dim) {
        if (train.task == TaskKind::Multiclass) {
            double top = 0.0;
            for (const auto& g : data.graphs)
                for (double t : g.target) top = std::max(top, t);
            model.out_dim = static_cast<std::size_t>(top) + 1;
        } else {
            model.out_dim = data.schema.target_dim;
        }
    }
    infer_features = false;
    infer_out_dim = false;
    validate();
}

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::map<std::string, std::size_t, std::less<>> seen;
    std::size_t line_no = 0, start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string_view::npos, ErrorCode::Parse, fmt::format("config line {}: expected key = value", line_no));
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (auto it = seen.find(key); it != seen.end()) {
            fail(ErrorCode::Parse, fmt::format("config line {}: key '{}' already set on line {}", line_no, key, it->second));
        }
        seen.emplace(std::string(key), line_no);
        try {
            apply(cfg, key, value);
        } catch (const Error& e) {
            fail(e.code(), fmt::format("config line {}: {}", line_no, e.what()));
        }
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::Io, fmt::format("cannot open config '{}'", path));
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str());
}

std::string serialize_config(const RunConfig& cfg) {
    const auto& m = cfg.model;
    const auto& t = cfg.train;
    auto size_str = [](std::size_t x) { return std::to_string(x); };
    std::string out;
    auto put = [&](std::string_view key, std::string_view value) { out += fmt::format("{} = {}\n", key, value); };
    put("seed", std::to_string(cfg.seed));
    put("output.dir", cfg.output_dir);
    put("data.path", cfg.data.path);
    put("data.train_fraction", fmt_double(cfg.data.train_fraction));
    put("data.val_fraction", fmt_double(cfg.data.val_fraction));
    put("data.test_fraction", fmt_double(cfg.data.test_fraction));
    put("model.n", size_str(m.n));
    put("model.hidden", size_str(m.hidden));
    put("model.layers", size_str(m.layers));
    put("model.mp_mlp", m.mp_mlp ? "true" : "false");
    put("model.aggregator", to_string(m.aggregator));
    put("model.softmax_tau", fmt_double(m.softmax_tau));
    put("model.skip", to_string(m.skip));
    put("model.mp_dropout", fmt_double(m.mp_dropout));
    put("model.dn_widths", join(m.dn_widths, size_str));
    put("model.dn_dropout", join(m.dn_dropout, fmt_double));
    put("model.dropout_mode", to_string(m.dropout_mode));
    put("model.batchnorm", m.batchnorm ? "true" : "false");
    put("model.contribution_init", m.contribution_init ? to_string(*m.contribution_init) : "auto");
    put("model.weight_init", to_string(m.weight_init));
    put("model.freeze_contributions", m.freeze_contributions ? "true" : "false");
    put("model.node_level", m.node_level ? "true" : "false");
    if (!cfg.infer_out_dim) put("model.out_dim", size_str(m.out_dim));
    if (!cfg.infer_features) {
        put("model.node_vocab", join(m.features.node_vocab, size_str));
        put("model.node_cont_dim", size_str(m.features.node_cont_dim));
        put("model.edge_vocab", join(m.features.edge_vocab, size_str));
        put("model.edge_cont_dim", size_str(m.features.edge_cont_dim));
    }
    put("train.lr", fmt_double(t.lr));
    put("train.lambda1", fmt_double(t.lambda1));
    put("train.lambda2", fmt_double(t.lambda2));
    put("train.norm_p", fmt_double(t.norm_p));
    put("train.plateau_factor", fmt_double(t.plateau_factor));
    put("train.patience", size_str(t.patience));
    put("train.min_lr", fmt_double(t.min_lr));
    put("train.max_epochs", size_str(t.max_epochs));
    put("train.clip_norm", fmt_double(t.clip_norm));
    put("train.batch_size", size_str(t.batch_size));
    put("train.eval_batch_size", size_str(t.eval_batch_size));
    put("train.task", to_string(t.task));
    put("train.metric", t.metric ? to_string(*t.metric) : "auto");
    put("train.stop_train_metric", fmt_double(t.stop_train_metric));
    return out;
}

} // namespace phc
