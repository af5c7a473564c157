#pragma once

// Model and run configuration plus the line-based `key = value` text format.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <tuple>
#include <map>
#include <sstream>
#include <string>

#include "mplt/tensor.hpp"

namespace mplt {

struct ModelConfig {
    std::size_t patch_size = 16;
    std::size_t embed_dim = 768;
    std::size_t num_layers = 12;
    std::size_t num_heads = 12;
    std::size_t mlp_ratio = 4;
    std::size_t template_height = 128;
    std::size_t template_width = 128;
    std::size_t search_size = 256;
    std::size_t reduction_ratio = 16;
    std::size_t head_channels = 256;
    double fovea_init = 10.0;
    bool share_backbone = true;
    bool hanning_window = true;
    bool prompter_sigmoid = false;
    bool fovea_on_other = false;

    bool use_mvip = true;
    bool use_spatial_attn = true;
    bool use_token_attn = true;
    bool use_template_update = true;
    bool use_kalman = true;

    std::size_t template_tokens() const {
        return (template_height / patch_size) * (template_width / patch_size);
    }
    std::size_t search_grid() const { return search_size / patch_size; }
    std::size_t search_tokens() const { return search_grid() * search_grid(); }
    std::size_t tokens() const { return template_tokens() + search_tokens(); }
    std::size_t head_dim() const { return embed_dim / num_heads; }

    /// Throws ConfigError on the first violated invariant.
    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError(m); };
        if (patch_size == 0 || embed_dim == 0 || num_layers == 0 || num_heads == 0 || mlp_ratio == 0)
            fail("patch_size, embed_dim, num_layers, num_heads and mlp_ratio must be positive");
        if (template_height % patch_size || template_width % patch_size || search_size % patch_size)
            fail("template and search sizes must be divisible by patch_size=" + std::to_string(patch_size));
        if (template_height == 0 || template_width == 0 || search_size == 0) fail("image sizes must be positive");
        if (embed_dim % num_heads) fail("embed_dim must be divisible by num_heads");
        if (reduction_ratio == 0 || tokens() % reduction_ratio)
            fail("reduction_ratio=" + std::to_string(reduction_ratio) + " must divide token count " +
                 std::to_string(tokens()));
        if (head_channels < 8 || head_channels % 8) fail("head_channels must be a positive multiple of 8");
        if (!(fovea_init > 0)) fail("fovea_init must be > 0");
    }
};

struct RunConfig {
    ModelConfig model;
    std::uint64_t seed = 0;
    double thr_a = 0.91;
    double thr_b = 0.25;
    std::size_t history = 16;
    double template_context = 2.0;
    double search_context = 4.0;
    double kf_q_pos = 1e-2;
    double kf_q_vel = 1e-4;
    double kf_r = 1e-1;
    double kf_p0 = 10.0;
    std::size_t steps = 500;
    std::size_t batch_size = 1;
    double lr_backbone = 7.5e-5;
    double lr_other = 7.5e-4;
    double weight_decay = 1e-4;
    std::string sequences;
    std::string checkpoint;
    std::string output;

    void validate() const {
        model.validate();
        if (!(thr_a >= 0 && thr_a <= 1 && thr_b >= 0 && thr_b <= 1))
            throw ConfigError("thresholds must lie in [0, 1]");
        if (!(thr_b < thr_a)) throw ConfigError("thr_b must be smaller than thr_a");
        if (history == 0) throw ConfigError("history must be positive");
        if (!(template_context > 0 && search_context > 0)) throw ConfigError("context factors must be positive");
        if (!(kf_q_pos >= 0 && kf_q_vel >= 0 && kf_r > 0 && kf_p0 > 0))
            throw ConfigError("Kalman noise values must be non-negative (R, P0 positive)");
        if (!sequences.empty() && !std::filesystem::exists(sequences))
            throw ConfigError("sequences path does not exist: " + sequences);
    }
};

inline bool operator==(const ModelConfig& a, const ModelConfig& b) {
    auto tie = [](const ModelConfig& c) {
        return std::tie(c.patch_size, c.embed_dim, c.num_layers, c.num_heads, c.mlp_ratio, c.template_height,
                        c.template_width, c.search_size, c.reduction_ratio, c.head_channels, c.fovea_init,
                        c.share_backbone, c.hanning_window, c.prompter_sigmoid, c.fovea_on_other, c.use_mvip,
                        c.use_spatial_attn, c.use_token_attn, c.use_template_update, c.use_kalman);
    };
    return tie(a) == tie(b);
}

inline bool operator==(const RunConfig& a, const RunConfig& b) {
    auto tie = [](const RunConfig& c) {
        return std::tie(c.seed, c.thr_a, c.thr_b, c.history, c.template_context, c.search_context, c.kf_q_pos,
                        c.kf_q_vel, c.kf_r, c.kf_p0, c.steps, c.batch_size, c.lr_backbone, c.lr_other,
                        c.weight_decay, c.sequences, c.checkpoint, c.output);
    };
    return a.model == b.model && tie(a) == tie(b);
}

namespace detail {

// One binder per key: parse sets the field, print renders it.
struct ConfigField {
    std::function<void(RunConfig&, const std::string&)> parse;
    std::function<std::string(const RunConfig&)> print;
};

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

template <typename Get>
ConfigField size_field(Get get) {
    return {[get](RunConfig& c, const std::string& v) {
                std::size_t pos = 0;
                unsigned long long parsed = 0;
                try {
                    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
                    parsed = std::stoull(v, &pos);
                } catch (const std::exception&) {
                    pos = 0;
                }
                if (pos != v.size() || v.empty()) throw std::invalid_argument("expected a non-negative integer");
                get(c) = static_cast<std::remove_reference_t<decltype(get(c))>>(parsed);
            },
            [get](const RunConfig& c) { return std::to_string(get(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
ConfigField double_field(Get get) {
    return {[get](RunConfig& c, const std::string& v) {
                std::size_t pos = 0;
                double parsed = 0;
                try {
                    parsed = std::stod(v, &pos);
                } catch (const std::exception&) {
                    pos = 0;
                }
                if (pos != v.size() || v.empty()) throw std::invalid_argument("expected a number");
                get(c) = parsed;
            },
            [get](const RunConfig& c) { return format_double(get(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
ConfigField bool_field(Get get) {
    return {[get](RunConfig& c, const std::string& v) {
                if (v == "true" || v == "1")
                    get(c) = true;
                else if (v == "false" || v == "0")
                    get(c) = false;
                else
                    throw std::invalid_argument("expected true or false");
            },
            [get](const RunConfig& c) { return std::string(get(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Get>
ConfigField string_field(Get get) {
    return {[get](RunConfig& c, const std::string& v) { get(c) = v; },
            [get](const RunConfig& c) { return get(const_cast<RunConfig&>(c)); }};
}

inline const std::map<std::string, ConfigField>& config_fields() {
    static const std::map<std::string, ConfigField> fields = {
        {"patch_size", size_field([](RunConfig& c) -> auto& { return c.model.patch_size; })},
        {"embed_dim", size_field([](RunConfig& c) -> auto& { return c.model.embed_dim; })},
        {"num_layers", size_field([](RunConfig& c) -> auto& { return c.model.num_layers; })},
        {"num_heads", size_field([](RunConfig& c) -> auto& { return c.model.num_heads; })},
        {"mlp_ratio", size_field([](RunConfig& c) -> auto& { return c.model.mlp_ratio; })},
        {"template_height", size_field([](RunConfig& c) -> auto& { return c.model.template_height; })},
        {"template_width", size_field([](RunConfig& c) -> auto& { return c.model.template_width; })},
        {"search_size", size_field([](RunConfig& c) -> auto& { return c.model.search_size; })},
        {"reduction_ratio", size_field([](RunConfig& c) -> auto& { return c.model.reduction_ratio; })},
        {"head_channels", size_field([](RunConfig& c) -> auto& { return c.model.head_channels; })},
        {"fovea_init", double_field([](RunConfig& c) -> auto& { return c.model.fovea_init; })},
        {"share_backbone", bool_field([](RunConfig& c) -> auto& { return c.model.share_backbone; })},
        {"hanning_window", bool_field([](RunConfig& c) -> auto& { return c.model.hanning_window; })},
        {"prompter_sigmoid", bool_field([](RunConfig& c) -> auto& { return c.model.prompter_sigmoid; })},
        {"fovea_on_other", bool_field([](RunConfig& c) -> auto& { return c.model.fovea_on_other; })},
        {"use_mvip", bool_field([](RunConfig& c) -> auto& { return c.model.use_mvip; })},
        {"use_spatial_attn", bool_field([](RunConfig& c) -> auto& { return c.model.use_spatial_attn; })},
        {"use_token_attn", bool_field([](RunConfig& c) -> auto& { return c.model.use_token_attn; })},
        {"use_template_update", bool_field([](RunConfig& c) -> auto& { return c.model.use_template_update; })},
        {"use_kalman", bool_field([](RunConfig& c) -> auto& { return c.model.use_kalman; })},
        {"seed", size_field([](RunConfig& c) -> auto& { return c.seed; })},
        {"thr_a", double_field([](RunConfig& c) -> auto& { return c.thr_a; })},
        {"thr_b", double_field([](RunConfig& c) -> auto& { return c.thr_b; })},
        {"history", size_field([](RunConfig& c) -> auto& { return c.history; })},
        {"template_context", double_field([](RunConfig& c) -> auto& { return c.template_context; })},
        {"search_context", double_field([](RunConfig& c) -> auto& { return c.search_context; })},
        {"kf_q_pos", double_field([](RunConfig& c) -> auto& { return c.kf_q_pos; })},
        {"kf_q_vel", double_field([](RunConfig& c) -> auto& { return c.kf_q_vel; })},
        {"kf_r", double_field([](RunConfig& c) -> auto& { return c.kf_r; })},
        {"kf_p0", double_field([](RunConfig& c) -> auto& { return c.kf_p0; })},
        {"steps", size_field([](RunConfig& c) -> auto& { return c.steps; })},
        {"batch_size", size_field([](RunConfig& c) -> auto& { return c.batch_size; })},
        {"lr_backbone", double_field([](RunConfig& c) -> auto& { return c.lr_backbone; })},
        {"lr_other", double_field([](RunConfig& c) -> auto& { return c.lr_other; })},
        {"weight_decay", double_field([](RunConfig& c) -> auto& { return c.weight_decay; })},
        {"sequences", string_field([](RunConfig& c) -> auto& { return c.sequences; })},
        {"checkpoint", string_field([](RunConfig& c) -> auto& { return c.checkpoint; })},
        {"output", string_field([](RunConfig& c) -> auto& { return c.output; })},
    };
    return fields;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
/// Unknown keys and malformed lines are errors; absent keys keep defaults.
inline RunConfig parse_config(const std::string& text, bool validate = true) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    const auto& fields = detail::config_fields();
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected `key = value`");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        auto it = fields.find(key);
        if (it == fields.end())
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key `" + key + "`");
        try {
            it->second.parse(cfg, value);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("config key `" + key + "` (line " + std::to_string(line_no) + "): invalid value `" +
                              value + "`: " + e.what());
        }
    }
    if (validate) cfg.validate();
    return cfg;
}

inline std::string serialize_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& [key, field] : detail::config_fields()) out += key + " = " + field.print(cfg) + "\n";
    return out;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

}  // namespace mplt
