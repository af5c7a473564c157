#pragma once

// Parameter and multiply-accumulate accounting.
//
// MACs are counted analytically for matmuls, attention products, convolutions
// and affine maps only; normalization, activations, softmax and elementwise
// ops are not counted. flops = 2 * macs.

#include <map>
#include <string>
#include <vector>

#include "mplt/config.hpp"
#include "mplt/model.hpp"
#include "mplt/prompter.hpp"

namespace mplt {

struct CountRow {
    std::string module;
    std::size_t count = 0;
};

struct ParamTable {
    std::vector<CountRow> rows;  // in parameter registration order
    std::size_t total = 0;

    std::size_t get(const std::string& module) const {
        for (const auto& r : rows)
            if (r.module == module) return r.count;
        return 0;
    }
    /// Sum over rows whose module path starts with `prefix`.
    std::size_t sum_prefix(const std::string& prefix) const {
        std::size_t s = 0;
        for (const auto& r : rows)
            if (r.module.compare(0, prefix.size(), prefix) == 0) s += r.count;
        return s;
    }
};

/// Module path of a parameter name: encoder.{l}, encoder.rgb.{l},
/// prompter.{dir}.{l}, head.{branch}, patch_embed.{modality}, pos_embed, fusion.
inline std::string module_of(const std::string& name) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= name.size(); ++i)
        if (i == name.size() || name[i] == '.') {
            parts.push_back(name.substr(start, i - start));
            start = i + 1;
        }
    auto join = [&](std::size_t n) {
        std::string s = parts[0];
        for (std::size_t i = 1; i < n && i < parts.size(); ++i) s += "." + parts[i];
        return s;
    };
    const auto& root = parts[0];
    if (root == "encoder") return join(parts.size() > 1 && (parts[1] == "rgb" || parts[1] == "tir") ? 3 : 2);
    if (root == "prompter") return join(3);
    if (root == "head" || root == "patch_embed") return join(2);
    return root;
}

namespace detail {

inline void add_row(ParamTable& t, const std::string& module, std::size_t n) {
    if (t.rows.empty() || t.rows.back().module != module)
        t.rows.push_back({module, n});
    else
        t.rows.back().count += n;
    t.total += n;
}

}  // namespace detail

/// Exact element counts of a built model, grouped by module. All parameters
/// are trainable, so `trainable_only` does not change the result.
template <typename Real>
ParamTable count_params(const Model<Real>& model, bool trainable_only = true) {
    ParamTable t;
    for (const auto& p : model.parameters()) {
        if (trainable_only && !p.value.requires_grad()) continue;
        detail::add_row(t, module_of(p.name), p.value.size());
    }
    return t;
}

inline std::size_t encoder_layer_params(const ModelConfig& c) {
    const std::size_t d = c.embed_dim, hidden = c.mlp_ratio * c.embed_dim;
    return 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * hidden + hidden) + (hidden * d + d);
}

inline std::size_t head_branch_params(const ModelConfig& c, std::size_t out_channels) {
    const auto w = detail::head_widths(c);
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < w.size(); ++i) n += 9 * w[i] * w[i + 1] + 3 * w[i + 1];
    return n + w.back() * out_channels + out_channels;
}

/// Closed-form counterpart of count_params; needs no allocation, so it works
/// at full scale.
inline ParamTable count_params(const ModelConfig& c) {
    ParamTable t;
    const std::size_t d = c.embed_dim, patch_in = 3 * c.patch_size * c.patch_size;
    detail::add_row(t, "patch_embed.rgb", patch_in * d + d);
    detail::add_row(t, "patch_embed.tir", patch_in * d + d);
    detail::add_row(t, "pos_embed", c.tokens() * d);
    const char* mod[2] = {"rgb", "tir"};
    for (std::size_t b = 0; b < (c.share_backbone ? 1u : 2u); ++b)
        for (std::size_t l = 0; l < c.num_layers; ++l)
            detail::add_row(t, (c.share_backbone ? "encoder." : std::string("encoder.") + mod[b] + ".") + std::to_string(l),
                            encoder_layer_params(c));
    if (c.use_mvip) {
        const auto pc = prompter_param_count(c);
        const char* dir[2] = {"into_rgb", "into_tir"};
        for (auto* name : dir)
            for (std::size_t l = 0; l <= c.num_layers; ++l)
                detail::add_row(t, std::string("prompter.") + name + "." + std::to_string(l), l == 0 ? pc.imvip : pc.mvip);
    }
    detail::add_row(t, "fusion", 2 * d * d + d);
    detail::add_row(t, "head.score", head_branch_params(c, 1));
    detail::add_row(t, "head.offset", head_branch_params(c, 2));
    detail::add_row(t, "head.size", head_branch_params(c, 2));
    return t;
}

struct FlopRow {
    std::string module;
    std::size_t macs = 0;
};

struct FlopTable {
    std::vector<FlopRow> rows;
    std::size_t macs = 0;
    std::size_t flops() const { return 2 * macs; }

    std::size_t get(const std::string& module) const {
        std::size_t s = 0;
        for (const auto& r : rows)
            if (r.module == module) s += r.macs;
        return s;
    }
};

struct EncoderMacs {
    std::size_t linear = 0;     // qkv and output projections
    std::size_t attention = 0;  // QKᵀ and AV
    std::size_t mlp = 0;
    std::size_t total() const { return linear + attention + mlp; }
};

/// One encoder layer over `n` tokens of width D.
inline EncoderMacs encoder_layer_macs(const ModelConfig& c, std::size_t n) {
    const std::size_t d = c.embed_dim, hidden = c.mlp_ratio * d;
    return {n * d * 3 * d + n * d * d, 2 * n * n * d, 2 * n * d * hidden};
}

inline std::size_t prompter_branch_macs(const ModelConfig& c) {
    const std::size_t n = c.tokens(), d = c.embed_dim, hidden = n / c.reduction_ratio;
    std::size_t m = 0;
    if (c.use_token_attn) m += 2 * (n * hidden + hidden * n);
    if (c.use_spatial_attn) m += d * 2 * kSpatialKernel;
    return m;
}

inline std::size_t head_branch_macs(const ModelConfig& c, std::size_t out_channels) {
    const auto w = detail::head_widths(c);
    const std::size_t positions = c.search_tokens();
    std::size_t m = 0;
    for (std::size_t i = 0; i + 1 < w.size(); ++i) m += positions * 9 * w[i] * w[i + 1];
    return m + positions * w.back() * out_channels;
}

/// MACs of one forward pass. With `single_branch` the count covers the
/// one-modality baseline: one patch embedding, one encoder stack, no prompts,
/// no fusion, and the head.
inline FlopTable count_flops(const ModelConfig& c, bool single_branch = false) {
    FlopTable t;
    auto add = [&](const std::string& module, std::size_t m) {
        t.rows.push_back({module, m});
        t.macs += m;
    };
    const std::size_t n = c.tokens(), d = c.embed_dim;
    const std::size_t branches = single_branch ? 1 : 2;
    add("patch_embed", branches * n * 3 * c.patch_size * c.patch_size * d);
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        const auto e = encoder_layer_macs(c, n);
        add("encoder.linear", branches * e.linear);
        add("encoder.attention", branches * e.attention);
        add("encoder.mlp", branches * e.mlp);
    }
    if (!single_branch && c.use_mvip) add("prompter", 2 * (2 + 3 * c.num_layers) * prompter_branch_macs(c));
    if (!single_branch) add("fusion", n * 2 * d * d);
    add("head", head_branch_macs(c, 1) + 2 * head_branch_macs(c, 2));
    return t;
}

}  // namespace mplt
