#pragma once

// Multi-modal visual information prompters.
//
// A prompter turns token sequences of both modalities into an additive prompt
// for one branch. Each input branch passes through an attention stack (token
// attention then spatial attention); the current-modality branch is further
// sharpened by a fovea mask before the branches are summed.
//
//   token attention:   pool over D -> N×1 weights via N -> N/r -> N projections
//   spatial attention: pool over N -> 2×D, kernel-7 conv over D -> 1×D weights
//   fovea:             column-wise softmax over N of λ·h, multiplied onto h

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mplt/config.hpp"
#include "mplt/ops.hpp"

namespace mplt {

inline constexpr std::size_t kSpatialKernel = 7;

/// Weights of one attention stack (one prompter input branch).
template <typename Real = double>
struct AttentionBranchParams {
    Tensor<Real> s1_weight;  // N × N/r
    Tensor<Real> s1_bias;    // N/r
    Tensor<Real> s2_weight;  // N/r × N
    Tensor<Real> s2_bias;    // N
    Tensor<Real> t_kernel;   // 1 × 2 × 7
    Tensor<Real> t_bias;     // 1
};

/// Branch 0 is the current modality, 1 the other modality, 2 (MVIP only)
/// the previous layer's prompt.
template <typename Real = double>
struct PrompterParams {
    std::vector<AttentionBranchParams<Real>> branches;
    Tensor<Real> lambda;  // 1 × 1 fovea smoothing
};

enum class PromptDirection { into_rgb, into_tir };

template <typename Real = double>
struct PromptTensor {
    Tensor<Real> value;
    std::size_t layer = 0;
    PromptDirection direction = PromptDirection::into_rgb;
};

struct AttentionFlags {
    bool token = true;
    bool spatial = true;
    bool sigmoid = false;
    bool fovea_on_other = false;

    static AttentionFlags from(const ModelConfig& c) {
        return {c.use_token_attn, c.use_spatial_attn, c.prompter_sigmoid, c.fovea_on_other};
    }
};

namespace detail {

template <typename Real>
Tensor<Real> uniform_tensor(Shape shape, Real bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<Real> dist(-bound, bound);
    std::vector<Real> v(numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor<Real>::from(std::move(shape), std::move(v), true);
}

template <typename Real>
void check_tokens(const Tensor<Real>& h, std::string_view op) {
    if (h.rank() != 2) throw DimensionError(std::string(op) + ": expected N×D tokens, got " + shape_str(h.shape()));
}

}  // namespace detail

/// Fresh branch weights. The stage that ends the enabled stack is
/// zero-initialized so the branch emits exactly zero; an earlier stage gets
/// small uniform weights so gradients reach the zeroed stage.
template <typename Real = double>
AttentionBranchParams<Real> make_attention_branch(std::size_t tokens, std::size_t reduction, const AttentionFlags& flags,
                                                  std::mt19937_64& rng) {
    if (reduction == 0 || tokens % reduction)
        throw ConfigError("reduction ratio " + std::to_string(reduction) + " must divide token count " +
                          std::to_string(tokens));
    const std::size_t hidden = tokens / reduction;
    const bool zero_token_stage = !flags.spatial;
    AttentionBranchParams<Real> p;
    const Real b1 = Real(1) / std::sqrt(static_cast<Real>(tokens));
    const Real b2 = Real(1) / std::sqrt(static_cast<Real>(hidden));
    p.s1_weight = detail::uniform_tensor<Real>({tokens, hidden}, b1, rng);
    p.s1_bias = Tensor<Real>::zeros({hidden}, true);
    p.s2_weight = zero_token_stage ? Tensor<Real>::zeros({hidden, tokens}, true)
                                   : detail::uniform_tensor<Real>({hidden, tokens}, b2, rng);
    p.s2_bias = Tensor<Real>::zeros({tokens}, true);
    p.t_kernel = Tensor<Real>::zeros({1, 2, kSpatialKernel}, true);
    p.t_bias = Tensor<Real>::zeros({1}, true);
    return p;
}

template <typename Real = double>
PrompterParams<Real> make_prompter(std::size_t branches, const ModelConfig& config, std::mt19937_64& rng) {
    PrompterParams<Real> p;
    const auto flags = AttentionFlags::from(config);
    for (std::size_t b = 0; b < branches; ++b)
        p.branches.push_back(make_attention_branch<Real>(config.tokens(), config.reduction_ratio, flags, rng));
    p.lambda = Tensor<Real>::full({1, 1}, static_cast<Real>(config.fovea_init), true);
    return p;
}

/// Per-token reweighting: pooled over D, projected N -> N/r -> N with weights
/// shared between the mean and max paths, broadcast over D.
template <typename Real>
Tensor<Real> token_attention(const Tensor<Real>& h, const AttentionBranchParams<Real>& p, bool sigmoid = false) {
    detail::check_tokens(h, "token_attention");
    const std::size_t n = h.dim(0);
    if (p.s1_weight.dim(0) != n)
        throw ConfigError("token_attention: projection expects " + std::to_string(p.s1_weight.dim(0)) +
                          " tokens, got " + std::to_string(n));
    // Rows: [mean; max], each 1×N.
    auto pooled = concat<Real>({transpose(reduce(h, 1, ReduceKind::mean)), transpose(reduce(h, 1, ReduceKind::max))}, 0);
    auto hidden = activation(affine(pooled, p.s1_weight, p.s1_bias), Activation::relu);
    auto projected = affine(hidden, p.s2_weight, p.s2_bias);        // 2×N
    auto weights = transpose(reduce(projected, 0, ReduceKind::mean));  // N×1, mean = sum/2
    weights = scale(weights, Real(2));
    if (sigmoid) weights = activation(weights, Activation::sigmoid);
    return mul(h, weights);
}

/// Per-feature reweighting: pooled over N into a 2×D map, kernel-7
/// convolution over D down to 1×D, broadcast over N.
template <typename Real>
Tensor<Real> spatial_attention(const Tensor<Real>& h, const AttentionBranchParams<Real>& p, bool sigmoid = false) {
    detail::check_tokens(h, "spatial_attention");
    auto stacked = concat<Real>({reduce(h, 0, ReduceKind::mean), reduce(h, 0, ReduceKind::max)}, 0);  // 2×D
    auto weights = conv1d(stacked, p.t_kernel, p.t_bias, (kSpatialKernel - 1) / 2);                  // 1×D
    if (sigmoid) weights = activation(weights, Activation::sigmoid);
    return mul(h, weights);
}

/// Token attention then spatial attention; a disabled stage is the identity.
template <typename Real>
Tensor<Real> attention_stack(const Tensor<Real>& h, const AttentionBranchParams<Real>& p, const AttentionFlags& flags) {
    Tensor<Real> out = h;
    if (flags.token) out = token_attention(out, p, flags.sigmoid);
    if (flags.spatial) out = spatial_attention(out, p, flags.sigmoid);
    return out;
}

/// Column-stochastic mask softmax_N(λ·h) applied elementwise to h.
template <typename Real>
Tensor<Real> fovea(const Tensor<Real>& h, const Tensor<Real>& lambda) {
    detail::check_tokens(h, "fovea");
    auto mask = softmax(mul(h, lambda), 0);
    return mul(mask, h);
}

template <typename Real>
Tensor<Real> fovea(const Tensor<Real>& h, Real lambda) {
    return fovea(h, Tensor<Real>::full({1, 1}, lambda));
}

namespace detail {

template <typename Real>
void require_same(const Tensor<Real>& a, const Tensor<Real>& b, std::string_view op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

}  // namespace detail

/// Two-branch prompter applied before the first encoder layer.
template <typename Real>
Tensor<Real> imvip(const Tensor<Real>& h_cur, const Tensor<Real>& h_other, const PrompterParams<Real>& p,
                   const AttentionFlags& flags) {
    detail::require_same(h_cur, h_other, "imvip");
    if (p.branches.size() < 2) throw ConfigError("imvip needs two branches");
    auto cur = attention_stack(h_cur, p.branches[0], flags);
    auto other = attention_stack(h_other, p.branches[1], flags);
    if (flags.fovea_on_other) return add(cur, fovea(other, p.lambda));
    return add(fovea(cur, p.lambda), other);
}

/// Three-branch prompter for encoder layers 1..L:
/// fovea(stack(h_cur)) + stack(h_other) + stack(p_prev).
template <typename Real>
Tensor<Real> mvip(const Tensor<Real>& h_cur, const Tensor<Real>& p_prev, const Tensor<Real>& h_other,
                  const PrompterParams<Real>& p, const AttentionFlags& flags) {
    detail::require_same(h_cur, h_other, "mvip");
    detail::require_same(h_cur, p_prev, "mvip");
    if (p.branches.size() < 3) throw ConfigError("mvip needs three branches");
    auto cur = attention_stack(h_cur, p.branches[0], flags);
    auto other = attention_stack(h_other, p.branches[1], flags);
    auto prev = attention_stack(p_prev, p.branches[2], flags);
    if (flags.fovea_on_other) return add(add(cur, fovea(other, p.lambda)), prev);
    return add(add(fovea(cur, p.lambda), other), prev);
}

struct PrompterParamCount {
    std::size_t branch = 0;          // one attention stack, without λ
    std::size_t imvip = 0;           // 2 branches + λ
    std::size_t mvip = 0;            // 3 branches + λ
    std::size_t per_layer_both = 0;  // two MVIP directions of one encoder layer
    std::size_t total = 0;           // both directions, IMVIP + L MVIPs
};

/// Closed-form prompter parameter counts.
inline PrompterParamCount prompter_param_count(const ModelConfig& c) {
    const std::size_t n = c.tokens();
    const std::size_t hidden = n / c.reduction_ratio;
    PrompterParamCount out;
    out.branch = (n * hidden + hidden) + (hidden * n + n) + (2 * kSpatialKernel + 1);
    out.imvip = 2 * out.branch + 1;
    out.mvip = 3 * out.branch + 1;
    out.per_layer_both = 2 * out.mvip;
    out.total = c.use_mvip ? 2 * (out.imvip + c.num_layers * out.mvip) : 0;
    return out;
}

}  // namespace mplt
