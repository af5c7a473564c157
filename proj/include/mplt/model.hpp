#pragma once

// Dual-branch one-stream tracker: patch embedding, pre-norm ViT encoder,
// mutual prompting between the RGB and TIR branches, channel fusion, and a
// centre-based localization head with its training loss.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mplt/box.hpp"
#include "mplt/config.hpp"
#include "mplt/image.hpp"
#include "mplt/ops.hpp"
#include "mplt/prompter.hpp"

namespace mplt {

enum class Modality { rgb = 0, tir = 1, fused = 2 };
enum class SegmentRole { template_segment, search_segment };

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::rgb: return "rgb";
        case Modality::tir: return "tir";
        case Modality::fused: return "fused";
    }
    return "?";
}

/// N×D tokens; template rows occupy [0, n_z).
template <typename Real = double>
struct TokenSeq {
    Tensor<Real> tokens;
    std::size_t n_z = 0;
    std::size_t n_x = 0;
    Modality modality = Modality::rgb;

    std::size_t size() const { return n_z + n_x; }
};

template <typename Real = double>
struct EncoderLayerParams {
    Tensor<Real> ln1_gain, ln1_bias;
    Tensor<Real> qkv_weight, qkv_bias;    // D × 3D
    Tensor<Real> proj_weight, proj_bias;  // D × D
    Tensor<Real> ln2_gain, ln2_bias;
    Tensor<Real> fc1_weight, fc1_bias;  // D × mlp·D
    Tensor<Real> fc2_weight, fc2_bias;  // mlp·D × D
};

/// 3×3 convolution over a positions×channels map, then LayerNorm over
/// channels and ReLU.
template <typename Real = double>
struct ConvBlockParams {
    Tensor<Real> weight;  // 9·C_in × C_out
    Tensor<Real> bias;
    Tensor<Real> norm_gain, norm_bias;
};

template <typename Real = double>
struct HeadBranchParams {
    std::vector<ConvBlockParams<Real>> blocks;  // C -> c -> c/2 -> c/4 -> c/8
    Tensor<Real> out_weight, out_bias;          // c/8 × out (1×1 conv)
};

template <typename Real = double>
struct HeadParams {
    HeadBranchParams<Real> score, offset, size;
};

template <typename Real = double>
struct ModelParams {
    std::array<Tensor<Real>, 2> patch_weight, patch_bias;  // per modality, 3P² × D
    Tensor<Real> pos_template, pos_search;                 // shared across modalities
    // encoders[1] is empty when the backbone is shared.
    std::array<std::vector<EncoderLayerParams<Real>>, 2> encoders;
    // prompters[direction][0] is the IMVIP, [l] the MVIP of layer l.
    std::array<std::vector<PrompterParams<Real>>, 2> prompters;
    Tensor<Real> fusion_weight, fusion_bias;  // 2D × D
    HeadParams<Real> head;
};

namespace detail {

template <typename Real>
Tensor<Real> normal_tensor(Shape shape, Real stddev, std::mt19937_64& rng) {
    // Truncated at two standard deviations.
    std::normal_distribution<Real> dist(Real(0), stddev);
    std::vector<Real> v(numel(shape));
    for (auto& x : v) {
        do x = dist(rng);
        while (std::abs(x) > 2 * stddev);
    }
    return Tensor<Real>::from(std::move(shape), std::move(v), true);
}

template <typename Real>
EncoderLayerParams<Real> make_encoder_layer(const ModelConfig& c, std::mt19937_64& rng) {
    const std::size_t d = c.embed_dim, hidden = c.mlp_ratio * c.embed_dim;
    const Real std = Real(0.02);
    EncoderLayerParams<Real> p;
    p.ln1_gain = Tensor<Real>::full({d}, Real(1), true);
    p.ln1_bias = Tensor<Real>::zeros({d}, true);
    p.qkv_weight = normal_tensor<Real>({d, 3 * d}, std, rng);
    p.qkv_bias = Tensor<Real>::zeros({3 * d}, true);
    p.proj_weight = normal_tensor<Real>({d, d}, std, rng);
    p.proj_bias = Tensor<Real>::zeros({d}, true);
    p.ln2_gain = Tensor<Real>::full({d}, Real(1), true);
    p.ln2_bias = Tensor<Real>::zeros({d}, true);
    p.fc1_weight = normal_tensor<Real>({d, hidden}, std, rng);
    p.fc1_bias = Tensor<Real>::zeros({hidden}, true);
    p.fc2_weight = normal_tensor<Real>({hidden, d}, std, rng);
    p.fc2_bias = Tensor<Real>::zeros({d}, true);
    return p;
}

inline std::vector<std::size_t> head_widths(const ModelConfig& c) {
    return {c.embed_dim, c.head_channels, c.head_channels / 2, c.head_channels / 4, c.head_channels / 8};
}

template <typename Real>
HeadBranchParams<Real> make_head_branch(const ModelConfig& c, std::size_t out_channels, std::mt19937_64& rng) {
    const auto widths = head_widths(c);
    HeadBranchParams<Real> p;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const std::size_t fan_in = 9 * widths[i];
        ConvBlockParams<Real> b;
        b.weight = uniform_tensor<Real>({fan_in, widths[i + 1]}, std::sqrt(Real(6) / static_cast<Real>(fan_in)), rng);
        b.bias = Tensor<Real>::zeros({widths[i + 1]}, true);
        b.norm_gain = Tensor<Real>::full({widths[i + 1]}, Real(1), true);
        b.norm_bias = Tensor<Real>::zeros({widths[i + 1]}, true);
        p.blocks.push_back(std::move(b));
    }
    const std::size_t last = widths.back();
    p.out_weight = uniform_tensor<Real>({last, out_channels}, Real(1) / std::sqrt(static_cast<Real>(last)), rng);
    p.out_bias = Tensor<Real>::zeros({out_channels}, true);
    return p;
}

}  // namespace detail

/// A model is its configuration plus named parameters. The registry shares
/// storage with the structured fields.
template <typename Real = double>
class Model {
public:
    using Scalar = Real;

    static Model create(const ModelConfig& config, std::uint64_t seed) {
        config.validate();
        Model m;
        m.config_ = config;
        std::mt19937_64 rng(seed);
        auto& p = m.params_;
        const std::size_t d = config.embed_dim;
        const std::size_t patch_in = 3 * config.patch_size * config.patch_size;
        for (std::size_t b = 0; b < 2; ++b) {
            p.patch_weight[b] = detail::uniform_tensor<Real>(
                {patch_in, d}, Real(1) / std::sqrt(static_cast<Real>(patch_in)), rng);
            p.patch_bias[b] = Tensor<Real>::zeros({d}, true);
        }
        p.pos_template = detail::normal_tensor<Real>({config.template_tokens(), d}, Real(0.02), rng);
        p.pos_search = detail::normal_tensor<Real>({config.search_tokens(), d}, Real(0.02), rng);
        const std::size_t branches = config.share_backbone ? 1 : 2;
        for (std::size_t b = 0; b < branches; ++b)
            for (std::size_t l = 0; l < config.num_layers; ++l)
                p.encoders[b].push_back(detail::make_encoder_layer<Real>(config, rng));
        if (config.use_mvip)
            for (std::size_t dir = 0; dir < 2; ++dir) {
                p.prompters[dir].push_back(make_prompter<Real>(2, config, rng));
                for (std::size_t l = 0; l < config.num_layers; ++l)
                    p.prompters[dir].push_back(make_prompter<Real>(3, config, rng));
            }
        p.fusion_weight = detail::uniform_tensor<Real>({2 * d, d}, Real(1) / std::sqrt(static_cast<Real>(2 * d)), rng);
        p.fusion_bias = Tensor<Real>::zeros({d}, true);
        p.head.score = detail::make_head_branch<Real>(config, 1, rng);
        p.head.offset = detail::make_head_branch<Real>(config, 2, rng);
        p.head.size = detail::make_head_branch<Real>(config, 2, rng);
        m.rebuild_registry();
        return m;
    }

    const ModelConfig& config() const { return config_; }
    ModelConfig& mutable_config() { return config_; }
    const ModelParams<Real>& params() const { return params_; }
    ModelParams<Real>& mutable_params() { return params_; }

    const std::vector<EncoderLayerParams<Real>>& encoder(Modality m) const {
        return config_.share_backbone || m == Modality::rgb ? params_.encoders[0] : params_.encoders[1];
    }

    std::vector<Parameter<Real>>& parameters() { return registry_; }
    const std::vector<Parameter<Real>>& parameters() const { return registry_; }

    const Parameter<Real>* find(const std::string& name) const {
        for (const auto& p : registry_)
            if (p.name == name) return &p;
        return nullptr;
    }

    void zero_grad() {
        for (auto& p : registry_) p.value.zero_grad();
    }

    /// Deep copy with independent parameter storage.
    Model clone() const {
        Model m;
        m.config_ = config_;
        m.params_ = params_;
        m.rebuild_registry();
        // Registry now aliases the copied handles, which still share nodes;
        // detach each one and re-point the structured fields.
        std::map<const void*, Tensor<Real>> fresh;
        for (auto& p : m.registry_) {
            auto copy = Tensor<Real>::from(p.value.shape(), {p.value.data().begin(), p.value.data().end()}, true);
            fresh.emplace(p.value.node().get(), copy);
        }
        m.for_each_tensor([&](const std::string&, Tensor<Real>& t) { t = fresh.at(t.node().get()); });
        m.rebuild_registry();
        return m;
    }

    /// Visits every structured tensor with its checkpoint name.
    template <typename F>
    void for_each_tensor(F&& f) {
        auto& p = params_;
        const char* mod[2] = {"rgb", "tir"};
        for (std::size_t b = 0; b < 2; ++b) {
            f(std::string("patch_embed.") + mod[b] + ".weight", p.patch_weight[b]);
            f(std::string("patch_embed.") + mod[b] + ".bias", p.patch_bias[b]);
        }
        f("pos_embed.template", p.pos_template);
        f("pos_embed.search", p.pos_search);
        for (std::size_t b = 0; b < 2; ++b) {
            const std::string prefix = config_.share_backbone ? "encoder." : std::string("encoder.") + mod[b] + ".";
            for (std::size_t l = 0; l < p.encoders[b].size(); ++l) {
                auto& e = p.encoders[b][l];
                const std::string n = prefix + std::to_string(l) + ".";
                f(n + "ln1.gain", e.ln1_gain);
                f(n + "ln1.bias", e.ln1_bias);
                f(n + "attn.qkv.weight", e.qkv_weight);
                f(n + "attn.qkv.bias", e.qkv_bias);
                f(n + "attn.proj.weight", e.proj_weight);
                f(n + "attn.proj.bias", e.proj_bias);
                f(n + "ln2.gain", e.ln2_gain);
                f(n + "ln2.bias", e.ln2_bias);
                f(n + "mlp.fc1.weight", e.fc1_weight);
                f(n + "mlp.fc1.bias", e.fc1_bias);
                f(n + "mlp.fc2.weight", e.fc2_weight);
                f(n + "mlp.fc2.bias", e.fc2_bias);
            }
        }
        const char* dir[2] = {"into_rgb", "into_tir"};
        const char* branch[3] = {"cur", "other", "prev"};
        for (std::size_t d = 0; d < 2; ++d)
            for (std::size_t l = 0; l < p.prompters[d].size(); ++l) {
                auto& pr = p.prompters[d][l];
                const std::string n = std::string("prompter.") + dir[d] + "." + std::to_string(l) + ".";
                for (std::size_t b = 0; b < pr.branches.size(); ++b) {
                    auto& br = pr.branches[b];
                    const std::string bn = n + branch[b] + ".";
                    f(bn + "s1.weight", br.s1_weight);
                    f(bn + "s1.bias", br.s1_bias);
                    f(bn + "s2.weight", br.s2_weight);
                    f(bn + "s2.bias", br.s2_bias);
                    f(bn + "t.kernel", br.t_kernel);
                    f(bn + "t.bias", br.t_bias);
                }
                f(n + "lambda", pr.lambda);
            }
        f("fusion.weight", p.fusion_weight);
        f("fusion.bias", p.fusion_bias);
        auto head_branch = [&](const std::string& name, HeadBranchParams<Real>& h) {
            for (std::size_t i = 0; i < h.blocks.size(); ++i) {
                const std::string n = "head." + name + "." + std::to_string(i) + ".";
                f(n + "conv.weight", h.blocks[i].weight);
                f(n + "conv.bias", h.blocks[i].bias);
                f(n + "norm.gain", h.blocks[i].norm_gain);
                f(n + "norm.bias", h.blocks[i].norm_bias);
            }
            f("head." + name + ".out.weight", h.out_weight);
            f("head." + name + ".out.bias", h.out_bias);
        };
        head_branch("score", p.head.score);
        head_branch("offset", p.head.offset);
        head_branch("size", p.head.size);
    }

private:
    void rebuild_registry() {
        registry_.clear();
        for_each_tensor([&](const std::string& name, Tensor<Real>& t) { registry_.push_back({name, t}); });
    }

    ModelConfig config_;
    ModelParams<Real> params_;
    std::vector<Parameter<Real>> registry_;
};

/// Flattens P×P×3 patches row-major over the patch grid, projects them and
/// adds the positional table of the segment role.
template <typename Real>
TokenSeq<Real> patch_embed(const Image& image, Modality modality, SegmentRole role, const Model<Real>& model) {
    const auto& c = model.config();
    const std::size_t ps = c.patch_size;
    if (modality == Modality::fused) throw ConfigError("patch_embed: modality must be rgb or tir");
    if (image.channels != 3) throw DimensionError("patch_embed: expected a 3-channel image");
    if (image.height % ps || image.width % ps)
        throw ConfigError("patch_embed: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                          " not divisible by patch size " + std::to_string(ps));
    const bool is_template = role == SegmentRole::template_segment;
    const std::size_t want_h = is_template ? c.template_height : c.search_size;
    const std::size_t want_w = is_template ? c.template_width : c.search_size;
    if (image.height != want_h || image.width != want_w)
        throw ConfigError("patch_embed: expected " + std::to_string(want_h) + "x" + std::to_string(want_w) +
                          " image, got " + std::to_string(image.height) + "x" + std::to_string(image.width));
    const std::size_t gh = image.height / ps, gw = image.width / ps;
    const std::size_t n = gh * gw, fin = 3 * ps * ps;
    std::vector<Real> flat(n * fin);
    for (std::size_t py = 0; py < gh; ++py)
        for (std::size_t px = 0; px < gw; ++px) {
            Real* dst = flat.data() + (py * gw + px) * fin;
            for (std::size_t y = 0; y < ps; ++y)
                for (std::size_t x = 0; x < ps; ++x)
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        *dst++ = static_cast<Real>(image.at(py * ps + y, px * ps + x, ch));
        }
    const auto m = static_cast<std::size_t>(modality);
    const auto& p = model.params();
    auto patches = Tensor<Real>::from({n, fin}, std::move(flat));
    auto tokens = add(affine(patches, p.patch_weight[m], p.patch_bias[m]), is_template ? p.pos_template : p.pos_search);
    return {tokens, is_template ? n : 0, is_template ? 0 : n, modality};
}

template <typename Real>
TokenSeq<Real> concat_tokens(const TokenSeq<Real>& z, const TokenSeq<Real>& x) {
    if (z.modality != x.modality) throw ConfigError("concat_tokens: modality mismatch");
    if (z.n_x != 0 || x.n_z != 0) throw ConfigError("concat_tokens: expected template then search segment");
    return {concat<Real>({z.tokens, x.tokens}, 0), z.n_z, x.n_x, z.modality};
}

/// Inverse of concat_tokens.
template <typename Real>
std::pair<TokenSeq<Real>, TokenSeq<Real>> split_tokens(const TokenSeq<Real>& h) {
    return {{slice(h.tokens, 0, 0, h.n_z), h.n_z, 0, h.modality}, {slice(h.tokens, 0, h.n_z, h.n_x), 0, h.n_x, h.modality}};
}

/// Pre-norm ViT block: h + MHSA(LN(h)), then + MLP(LN(·)). Attention spans all
/// tokens. When `attention` is given it receives each head's N×N probabilities.
template <typename Real>
Tensor<Real> encoder_layer(const Tensor<Real>& h, const EncoderLayerParams<Real>& p, std::size_t num_heads,
                           std::vector<Tensor<Real>>* attention = nullptr) {
    detail::check_tokens(h, "encoder_layer");
    const std::size_t d = h.dim(1);
    if (p.qkv_weight.dim(0) != d) throw DimensionError("encoder_layer: token width does not match layer");
    if (d % num_heads) throw ConfigError("encoder_layer: D not divisible by heads");
    const std::size_t hd = d / num_heads;
    const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(hd));

    auto x = layer_norm(h, p.ln1_gain, p.ln1_bias);
    auto qkv = affine(x, p.qkv_weight, p.qkv_bias);
    std::vector<Tensor<Real>> heads;
    for (std::size_t k = 0; k < num_heads; ++k) {
        auto q = slice(qkv, 1, k * hd, hd);
        auto key = slice(qkv, 1, d + k * hd, hd);
        auto v = slice(qkv, 1, 2 * d + k * hd, hd);
        auto probs = softmax(scale(matmul(q, transpose(key)), inv_sqrt), 1);
        if (attention) attention->push_back(probs);
        heads.push_back(matmul(probs, v));
    }
    auto attn = affine(num_heads == 1 ? heads.front() : concat(heads, 1), p.proj_weight, p.proj_bias);
    auto h1 = add(h, attn);
    auto y = layer_norm(h1, p.ln2_gain, p.ln2_bias);
    y = affine(activation(affine(y, p.fc1_weight, p.fc1_bias), Activation::gelu), p.fc2_weight, p.fc2_bias);
    return add(h1, y);
}

/// Optional instrumentation for one forward pass.
template <typename Real = double>
struct ForwardTrace {
    std::optional<std::size_t> attention_layer;        // 1-based encoder layer to record
    std::array<std::vector<Tensor<Real>>, 2> attention;  // per branch, per head
    std::vector<PromptTensor<Real>> prompts;
};

/// Plain L-layer forward of one branch without prompts.
template <typename Real>
TokenSeq<Real> single_forward(const TokenSeq<Real>& h, const Model<Real>& model) {
    const auto& layers = model.encoder(h.modality);
    Tensor<Real> x = h.tokens;
    for (const auto& lp : layers) x = encoder_layer(x, lp, model.config().num_heads);
    return {x, h.n_z, h.n_x, h.modality};
}

/// Mutual-prompt recursion over both branches:
///   P_m^0 = IMVIP(H_m, H_o);  H_m^0 = H_m + P_m^0
///   P_m^l = MVIP(H_m^{l-1}, P_m^{l-1}, H_o^{l-1});  H_m^l = E^l(H_m^{l-1}) + P_m^l
/// With use_mvip off the branches run independently.
template <typename Real>
std::pair<TokenSeq<Real>, TokenSeq<Real>> dual_forward(const TokenSeq<Real>& rgb, const TokenSeq<Real>& tir,
                                                       const Model<Real>& model, ForwardTrace<Real>* trace = nullptr) {
    if (rgb.n_z != tir.n_z || rgb.n_x != tir.n_x || rgb.tokens.shape() != tir.tokens.shape())
        throw DimensionError("dual_forward: branch shapes differ " + shape_str(rgb.tokens.shape()) + " vs " +
                             shape_str(tir.tokens.shape()));
    const auto& c = model.config();
    const auto& p = model.params();
    const auto flags = AttentionFlags::from(c);
    const auto& enc_rgb = model.encoder(Modality::rgb);
    const auto& enc_tir = model.encoder(Modality::tir);

    Tensor<Real> h_rgb = rgb.tokens, h_tir = tir.tokens;
    Tensor<Real> p_rgb, p_tir;
    auto record = [&](const Tensor<Real>& v, std::size_t layer, PromptDirection dir) {
        if (trace) trace->prompts.push_back({v, layer, dir});
    };
    if (c.use_mvip) {
        p_rgb = imvip(h_rgb, h_tir, p.prompters[0][0], flags);
        p_tir = imvip(h_tir, h_rgb, p.prompters[1][0], flags);
        record(p_rgb, 0, PromptDirection::into_rgb);
        record(p_tir, 0, PromptDirection::into_tir);
        h_rgb = add(h_rgb, p_rgb);
        h_tir = add(h_tir, p_tir);
    }
    for (std::size_t l = 1; l <= c.num_layers; ++l) {
        const bool capture = trace && trace->attention_layer == l;
        auto e_rgb = encoder_layer(h_rgb, enc_rgb[l - 1], c.num_heads, capture ? &trace->attention[0] : nullptr);
        auto e_tir = encoder_layer(h_tir, enc_tir[l - 1], c.num_heads, capture ? &trace->attention[1] : nullptr);
        if (c.use_mvip) {
            auto next_rgb = mvip(h_rgb, p_rgb, h_tir, p.prompters[0][l], flags);
            auto next_tir = mvip(h_tir, p_tir, h_rgb, p.prompters[1][l], flags);
            record(next_rgb, l, PromptDirection::into_rgb);
            record(next_tir, l, PromptDirection::into_tir);
            p_rgb = next_rgb;
            p_tir = next_tir;
            e_rgb = add(e_rgb, p_rgb);
            e_tir = add(e_tir, p_tir);
        }
        h_rgb = e_rgb;
        h_tir = e_tir;
    }
    return {{h_rgb, rgb.n_z, rgb.n_x, Modality::rgb}, {h_tir, tir.n_z, tir.n_x, Modality::tir}};
}

/// Concat along features (N×2D) then the linear reduction back to N×D.
template <typename Real>
TokenSeq<Real> fuse_reduce(const TokenSeq<Real>& rgb, const TokenSeq<Real>& tir, const Model<Real>& model) {
    if (rgb.tokens.shape() != tir.tokens.shape() || rgb.n_z != tir.n_z)
        throw DimensionError("fuse_reduce: branch shapes differ");
    const auto& p = model.params();
    auto fused = affine(concat<Real>({rgb.tokens, tir.tokens}, 1), p.fusion_weight, p.fusion_bias);
    return {fused, rgb.n_z, rgb.n_x, Modality::fused};
}

/// Head maps: score [G×G] in (0,1), offset [2×G×G] (x, y in cells, relative
/// to the cell centre), size [2×G×G] (w, h normalized by the search side).
template <typename Real = double>
struct HeadOutput {
    Tensor<Real> score, offset, size;
    std::size_t grid = 0;

    Real score_at(std::size_t r, std::size_t c) const { return score[r * grid + c]; }
    Real offset_at(std::size_t k, std::size_t r, std::size_t c) const { return offset[(k * grid + r) * grid + c]; }
    Real size_at(std::size_t k, std::size_t r, std::size_t c) const { return size[(k * grid + r) * grid + c]; }
};

namespace detail {

template <typename Real>
Tensor<Real> head_branch_forward(const Tensor<Real>& features, std::size_t grid, const HeadBranchParams<Real>& p) {
    Tensor<Real> x = features;  // positions × channels
    for (const auto& b : p.blocks) {
        x = affine(im2col(x, grid, grid, 3), b.weight, b.bias);
        // Per-channel statistics over grid positions (batch-norm with a batch of one).
        const auto unit = Tensor<Real>::full({grid * grid}, Real(1)), zero = Tensor<Real>::zeros({grid * grid});
        auto normed = transpose(layer_norm(transpose(x), unit, zero, Real(1e-5)));
        x = activation(add(mul(normed, reshape(b.norm_gain, {1, b.norm_gain.size()})), reshape(b.norm_bias, {1, b.norm_bias.size()})), Activation::relu);
    }
    return affine(x, p.out_weight, p.out_bias);  // G² × out
}

}  // namespace detail

template <typename Real>
HeadOutput<Real> head_forward(const TokenSeq<Real>& fused, const Model<Real>& model) {
    const std::size_t grid = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(fused.n_x))));
    if (grid * grid != fused.n_x)
        throw DimensionError("head_forward: search token count " + std::to_string(fused.n_x) + " is not square");
    const auto& h = model.params().head;
    auto search = slice(fused.tokens, 0, fused.n_z, fused.n_x);
    HeadOutput<Real> out;
    out.grid = grid;
    out.score = reshape(activation(detail::head_branch_forward(search, grid, h.score), Activation::sigmoid),
                        {grid, grid});
    out.offset = reshape(transpose(detail::head_branch_forward(search, grid, h.offset)), {2, grid, grid});
    out.size = reshape(transpose(activation(detail::head_branch_forward(search, grid, h.size), Activation::sigmoid)),
                       {2, grid, grid});
    return out;
}

/// Full network on prepared crops: embed, dual forward, fuse, head.
template <typename Real>
HeadOutput<Real> forward(const Model<Real>& model, const Image& template_rgb, const Image& template_tir,
                         const Image& search_rgb, const Image& search_tir, ForwardTrace<Real>* trace = nullptr) {
    auto rgb = concat_tokens(patch_embed(template_rgb, Modality::rgb, SegmentRole::template_segment, model),
                             patch_embed(search_rgb, Modality::rgb, SegmentRole::search_segment, model));
    auto tir = concat_tokens(patch_embed(template_tir, Modality::tir, SegmentRole::template_segment, model),
                             patch_embed(search_tir, Modality::tir, SegmentRole::search_segment, model));
    auto [out_rgb, out_tir] = dual_forward(rgb, tir, model, trace);
    return head_forward(fuse_reduce(out_rgb, out_tir, model), model);
}

/// Separable window 0.5·(1 - cos(2πk/(G+1))), k = 1..G, as a G×G grid.
inline std::vector<double> hanning_window(std::size_t grid) {
    std::vector<double> w1(grid), out(grid * grid);
    for (std::size_t k = 0; k < grid; ++k)
        w1[k] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(k + 1) / static_cast<double>(grid + 1)));
    for (std::size_t r = 0; r < grid; ++r)
        for (std::size_t c = 0; c < grid; ++c) out[r * grid + c] = w1[r] * w1[c];
    return out;
}

/// Picks the best cell of the (optionally windowed) score map and reads the
/// box there. Centre = (cell + 0.5 + offset)·P in crop pixels; size = Z·search
/// side; confidence = raw score at the cell.
template <typename Real>
BBox decode_box(const HeadOutput<Real>& out, const CropGeometry& geometry, std::size_t search_size, bool hanning) {
    const std::size_t g = out.grid;
    const auto window = hanning ? hanning_window(g) : std::vector<double>(g * g, 1.0);
    std::size_t best = 0;
    double best_val = -1.0;
    for (std::size_t i = 0; i < g * g; ++i) {
        const double v = static_cast<double>(out.score[i]) * window[i];
        if (v > best_val) {
            best_val = v;
            best = i;
        }
    }
    const std::size_t r = best / g, c = best % g;
    const double cell = static_cast<double>(search_size) / static_cast<double>(g);
    const double cx = (static_cast<double>(c) + 0.5 + static_cast<double>(out.offset_at(0, r, c))) * cell;
    const double cy = (static_cast<double>(r) + 0.5 + static_cast<double>(out.offset_at(1, r, c))) * cell;
    const double w = static_cast<double>(out.size_at(0, r, c)) * static_cast<double>(search_size);
    const double h = static_cast<double>(out.size_at(1, r, c)) * static_cast<double>(search_size);
    auto box = BBox::from_center(cx, cy, w, h, static_cast<double>(out.score[best]));
    return geometry.box_to_frame(box);
}

/// CenterNet Gaussian radius for a box of the given extent (in cells).
inline double gaussian_radius(double height, double width, double min_overlap = 0.7) {
    const double b1 = height + width;
    const double c1 = width * height * (1 - min_overlap) / (1 + min_overlap);
    const double r1 = (b1 + std::sqrt(b1 * b1 - 4 * c1)) / 2;
    const double b2 = 2 * (height + width);
    const double c2 = (1 - min_overlap) * width * height;
    const double r2 = (b2 + std::sqrt(b2 * b2 - 16 * c2)) / 2;
    const double a3 = 4 * min_overlap;
    const double b3 = -2 * min_overlap * (height + width);
    const double c3 = (min_overlap - 1) * width * height;
    const double r3 = (b3 + std::sqrt(b3 * b3 - 4 * a3 * c3)) / 2;
    return std::min({r1, r2, r3});
}

/// Grid cell holding a box centre given in search-crop pixels.
inline std::pair<std::size_t, std::size_t> center_cell(const BBox& gt, std::size_t grid, std::size_t search_size) {
    const double cell = static_cast<double>(search_size) / static_cast<double>(grid);
    auto clamp_cell = [&](double v) {
        return static_cast<std::size_t>(std::clamp(std::floor(v / cell), 0.0, static_cast<double>(grid - 1)));
    };
    return {clamp_cell(gt.cy()), clamp_cell(gt.cx())};
}

/// Peak-1 Gaussian heatmap around the centre cell (zero outside the radius).
inline std::vector<double> gaussian_target(const BBox& gt, std::size_t grid, std::size_t search_size) {
    const auto [cr, cc] = center_cell(gt, grid, search_size);
    const double cell = static_cast<double>(search_size) / static_cast<double>(grid);
    const int radius = std::max(0, static_cast<int>(gaussian_radius(gt.h / cell, gt.w / cell)));
    const double sigma = (2.0 * radius + 1.0) / 6.0;
    std::vector<double> t(grid * grid, 0.0);
    for (int dr = -radius; dr <= radius; ++dr)
        for (int dc = -radius; dc <= radius; ++dc) {
            const long r = static_cast<long>(cr) + dr, c = static_cast<long>(cc) + dc;
            if (r < 0 || c < 0 || r >= static_cast<long>(grid) || c >= static_cast<long>(grid)) continue;
            double v = std::exp(-(dr * dr + dc * dc) / (2 * sigma * sigma));
            if (v < std::numeric_limits<double>::epsilon() * 1.0) v = 0;
            t[static_cast<std::size_t>(r) * grid + static_cast<std::size_t>(c)] = v;
        }
    t[cr * grid + cc] = 1.0;
    return t;
}

inline constexpr double kGiouWeight = 2.0;
inline constexpr double kL1Weight = 5.0;

template <typename Real = double>
struct LossTerms {
    Tensor<Real> total;
    double focal = 0, giou = 0, l1 = 0;  // giou holds the 1 - GIoU term
};

/// focal(S, Gaussian) + 2·(1 - GIoU) + 5·L1, with the box read at the
/// ground-truth centre cell. `gt` is in search-crop pixels.
template <typename Real>
LossTerms<Real> compute_loss(const HeadOutput<Real>& out, const BBox& gt, std::size_t search_size) {
    if (!(gt.w > 0 && gt.h > 0)) throw std::invalid_argument("compute_loss: degenerate ground-truth box");
    const std::size_t g = out.grid;
    const auto target_vals = gaussian_target(gt, g, search_size);
    auto target = Tensor<Real>::from({g, g}, std::vector<Real>(target_vals.begin(), target_vals.end()));
    auto focal = focal_loss(out.score, target);

    const auto [r, c] = center_cell(gt, g, search_size);
    const Real gd = static_cast<Real>(g);
    const std::size_t cell = r * g + c;
    auto flat_off = reshape(out.offset, {2 * g * g});
    auto flat_size = reshape(out.size, {2 * g * g});
    auto off_x = gather(flat_off, {cell});
    auto off_y = gather(flat_off, {g * g + cell});
    auto w = gather(flat_size, {cell});
    auto h = gather(flat_size, {g * g + cell});
    auto cx = add_scalar(scale(off_x, Real(1) / gd), (static_cast<Real>(c) + Real(0.5)) / gd);
    auto cy = add_scalar(scale(off_y, Real(1) / gd), (static_cast<Real>(r) + Real(0.5)) / gd);
    auto x1 = sub(cx, scale(w, Real(0.5)));
    auto y1 = sub(cy, scale(h, Real(0.5)));
    auto x2 = add(cx, scale(w, Real(0.5)));
    auto y2 = add(cy, scale(h, Real(0.5)));

    const Real s = static_cast<Real>(search_size);
    const Real gx1 = static_cast<Real>(gt.x) / s, gy1 = static_cast<Real>(gt.y) / s;
    const Real gx2 = static_cast<Real>(gt.x + gt.w) / s, gy2 = static_cast<Real>(gt.y + gt.h) / s;
    auto k = [](Real v) { return Tensor<Real>::scalar(v); };

    auto iw = activation(sub(minimum(x2, k(gx2)), maximum(x1, k(gx1))), Activation::relu);
    auto ih = activation(sub(minimum(y2, k(gy2)), maximum(y1, k(gy1))), Activation::relu);
    auto inter = mul(iw, ih);
    auto uni = sub(add_scalar(mul(w, h), (gx2 - gx1) * (gy2 - gy1)), inter);
    auto ew = sub(maximum(x2, k(gx2)), minimum(x1, k(gx1)));
    auto eh = sub(maximum(y2, k(gy2)), minimum(y1, k(gy1)));
    auto enclosing = mul(ew, eh);
    auto giou_t = sub(div(inter, uni), div(sub(enclosing, uni), enclosing));
    auto giou_loss = add_scalar(scale(giou_t, Real(-1)), Real(1));

    auto pred = concat<Real>({x1, y1, x2, y2}, 0);
    auto gt_t = Tensor<Real>::from({4}, {gx1, gy1, gx2, gy2});
    auto l1 = mean(abs(sub(pred, gt_t)));

    LossTerms<Real> terms;
    terms.total = add(add(focal, scale(giou_loss, Real(kGiouWeight))), scale(l1, Real(kL1Weight)));
    terms.focal = static_cast<double>(focal.item());
    terms.giou = static_cast<double>(giou_loss.item());
    terms.l1 = static_cast<double>(l1.item());
    return terms;
}

}  // namespace mplt
