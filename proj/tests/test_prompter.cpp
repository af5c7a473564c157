#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace mplt;
using mplt::testing::random_tensor;
using T = Tensor<double>;

namespace {

ModelConfig config_with_tokens(std::size_t n_template, std::size_t n_search_side, std::size_t d, std::size_t r) {
    ModelConfig c;
    c.patch_size = 1;
    c.template_height = 1;
    c.template_width = n_template;
    c.search_size = n_search_side;
    c.embed_dim = d;
    c.num_heads = 1;
    c.reduction_ratio = r;
    return c;
}

AttentionBranchParams<double> random_branch(std::size_t n, std::size_t r, std::mt19937_64& rng) {
    const std::size_t hidden = n / r;
    return {random_tensor({n, hidden}, rng, -0.5, 0.5), random_tensor({hidden}, rng, -0.5, 0.5),
            random_tensor({hidden, n}, rng, -0.5, 0.5), random_tensor({n}, rng, -0.5, 0.5),
            random_tensor({1, 2, kSpatialKernel}, rng, -0.5, 0.5), random_tensor({1}, rng, -0.5, 0.5)};
}

PrompterParams<double> random_prompter(std::size_t branches, std::size_t n, std::size_t r, std::mt19937_64& rng) {
    PrompterParams<double> p;
    for (std::size_t b = 0; b < branches; ++b) p.branches.push_back(random_branch(n, r, rng));
    p.lambda = T::full({1, 1}, 1.7, true);
    return p;
}

void collect(PrompterParams<double>& p, std::vector<Parameter<double>>& out) {
    for (std::size_t b = 0; b < p.branches.size(); ++b) {
        auto& br = p.branches[b];
        const std::string n = "b" + std::to_string(b) + ".";
        out.push_back({n + "s1w", br.s1_weight});
        out.push_back({n + "s1b", br.s1_bias});
        out.push_back({n + "s2w", br.s2_weight});
        out.push_back({n + "s2b", br.s2_bias});
        out.push_back({n + "tk", br.t_kernel});
        out.push_back({n + "tb", br.t_bias});
    }
    out.push_back({"lambda", p.lambda});
}

T probe(const T& y) {
    std::mt19937_64 rng(77);
    return sum(mul(y, random_tensor(y.shape(), rng, -1, 1, false)));
}

bool all_zero(const T& t) {
    for (double v : t.data())
        if (v != 0.0) return false;
    return true;
}

double max_abs_diff(const T& a, const T& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

const AttentionFlags kBoth{};

}  // namespace

TEST(TokenAttention, ZeroSecondProjectionGivesZero) {
    std::mt19937_64 rng(1);
    auto p = random_branch(8, 4, rng);
    p.s2_weight = T::zeros({2, 8}, true);
    p.s2_bias = T::zeros({8}, true);
    EXPECT_TRUE(all_zero(token_attention(random_tensor({8, 5}, rng), p)));
}

TEST(TokenAttention, ConstantTokensAreScaledUniformly) {
    std::mt19937_64 rng(2);
    auto p = random_branch(8, 4, rng);
    auto p_uniform = p;
    // Identical per-token weights need a projection that treats tokens alike.
    p_uniform.s2_bias = T::full({8}, 0.3, true);
    p_uniform.s2_weight = T::full({2, 8}, 0.2, true);
    auto y = token_attention(T::full({8, 5}, 1.5), p_uniform);
    for (std::size_t i = 1; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], y[0]);
    // With any projection, each token is scaled by one factor across D.
    auto y2 = token_attention(T::full({8, 5}, 1.5), p);
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 1; c < 5; ++c) EXPECT_DOUBLE_EQ(y2.at(r, c), y2.at(r, 0));
}

TEST(TokenAttention, FullScaleShape) {
    std::mt19937_64 rng(3);
    auto p = random_branch(320, 16, rng);
    auto y = token_attention(random_tensor({320, 768}, rng, -1, 1, false), p);
    EXPECT_EQ(y.shape(), (Shape{320, 768}));
    EXPECT_EQ(p.s1_weight.shape(), (Shape{320, 20}));
}

TEST(TokenAttention, ReductionMustDivideTokens) {
    std::mt19937_64 rng(4);
    EXPECT_THROW(make_attention_branch<double>(10, 4, kBoth, rng), ConfigError);
    auto p = random_branch(8, 4, rng);
    EXPECT_THROW(token_attention(random_tensor({6, 3}, rng), p), ConfigError);
}

TEST(SpatialAttention, ZeroKernelGivesZero) {
    std::mt19937_64 rng(5);
    auto p = random_branch(6, 3, rng);
    p.t_kernel = T::zeros({1, 2, kSpatialKernel}, true);
    p.t_bias = T::zeros({1}, true);
    EXPECT_TRUE(all_zero(spatial_attention(random_tensor({6, 16}, rng), p)));
}

TEST(SpatialAttention, FullScaleShape) {
    std::mt19937_64 rng(6);
    auto p = random_branch(320, 16, rng);
    EXPECT_EQ(spatial_attention(random_tensor({320, 768}, rng, -1, 1, false), p).shape(), (Shape{320, 768}));
}

TEST(SpatialAttention, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(7);
    auto p = random_branch(6, 3, rng);
    std::vector<Parameter<double>> ps{{"h", random_tensor({6, 16}, rng)}, {"k", p.t_kernel}, {"b", p.t_bias}};
    auto r = grad_check<double>([&] { return probe(spatial_attention(ps[0].value, p)); }, ps);
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(AttentionStack, BothStagesOffIsIdentity) {
    std::mt19937_64 rng(8);
    auto p = random_branch(6, 3, rng);
    auto h = random_tensor({6, 4}, rng);
    auto y = attention_stack(h, p, {false, false, false, false});
    EXPECT_EQ(max_abs_diff(y, h), 0.0);
}

TEST(AttentionStack, ZeroInnerProjectionPropagates) {
    std::mt19937_64 rng(9);
    auto h = random_tensor({6, 4}, rng);
    auto p = random_branch(6, 3, rng);
    auto q = p;
    q.s2_weight = T::zeros({2, 6});
    q.s2_bias = T::zeros({6});
    EXPECT_TRUE(all_zero(attention_stack(h, q, kBoth)));
    auto k = p;
    k.t_kernel = T::zeros({1, 2, kSpatialKernel});
    k.t_bias = T::zeros({1});
    EXPECT_TRUE(all_zero(attention_stack(h, k, kBoth)));
}

TEST(AttentionStack, FreshBranchEmitsZeroUnderEveryFlagCombination) {
    std::mt19937_64 rng(10);
    auto h = random_tensor({12, 5}, rng);
    for (bool token : {false, true})
        for (bool spatial : {false, true}) {
            if (!token && !spatial) continue;
            AttentionFlags f{token, spatial, false, false};
            auto p = make_attention_branch<double>(12, 4, f, rng);
            EXPECT_TRUE(all_zero(attention_stack(h, p, f))) << token << spatial;
        }
}

TEST(AttentionStack, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    auto p = random_branch(6, 3, rng);
    std::vector<Parameter<double>> ps{{"h", random_tensor({6, 8}, rng)},
                                      {"s1w", p.s1_weight},
                                      {"s1b", p.s1_bias},
                                      {"s2w", p.s2_weight},
                                      {"s2b", p.s2_bias},
                                      {"tk", p.t_kernel},
                                      {"tb", p.t_bias}};
    for (bool sigmoid : {false, true}) {
        auto r = grad_check<double>(
            [&] { return probe(attention_stack(ps[0].value, p, {true, true, sigmoid, false})); }, ps);
        EXPECT_LT(r.max_rel_error, 1e-4);
    }
}

TEST(Fovea, ColumnsSumToOne) {
    std::mt19937_64 rng(12);
    for (double lambda : {0.1, 1.0, 10.0}) {
        auto h = random_tensor({9, 5}, rng, -3, 3, false);
        auto mask = softmax(scale(h, lambda), 0);
        for (std::size_t c = 0; c < 5; ++c) {
            double s = 0;
            for (std::size_t r = 0; r < 9; ++r) s += mask.at(r, c);
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
        // fovea output equals mask ⊙ h
        auto y = fovea(h, lambda);
        for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], mask[i] * h[i], 1e-15);
    }
}

TEST(Fovea, SmallLambdaApproachesUniformMask) {
    std::mt19937_64 rng(13);
    auto h = random_tensor({10, 4}, rng, -2, 2, false);
    auto y = fovea(h, 1e-8);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], h[i] / 10.0, 1e-6);
}

TEST(Fovea, DominantEntryTakesTheMask) {
    std::vector<double> v(6, 0.0);
    v[3] = 100.0;
    auto h = T::from({6, 1}, v);
    auto mask = softmax(scale(h, 1.0), 0);
    EXPECT_GT(mask[3], 0.99);
    EXPECT_NEAR(fovea(h, 1.0)[3], 100.0 * mask[3], 1e-12);
}

TEST(Fovea, ConcentrationIsMonotoneInLambda) {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 20; ++trial) {
        auto h = random_tensor({7, 3}, rng, -2, 2, false);
        for (std::size_t c = 0; c < 3; ++c) {
            std::size_t arg = 0;
            for (std::size_t r = 1; r < 7; ++r)
                if (h.at(r, c) > h.at(arg, c)) arg = r;
            double previous = 0;
            for (double lambda : {0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0}) {
                const double m = softmax(scale(h, lambda), 0).at(arg, c);
                EXPECT_GE(m, previous);
                previous = m;
            }
        }
    }
}

TEST(Mvip, FreshPrompterEmitsExactZero) {
    std::mt19937_64 rng(15);
    const auto c = config_with_tokens(2, 2, 8, 3);  // N = 6
    auto p = make_prompter<double>(3, c, rng);
    auto y = mvip(random_tensor({6, 8}, rng), random_tensor({6, 8}, rng), random_tensor({6, 8}, rng), p, kBoth);
    EXPECT_EQ(y.shape(), (Shape{6, 8}));
    EXPECT_TRUE(all_zero(y));
    auto q = make_prompter<double>(2, c, rng);
    auto z = imvip(random_tensor({6, 8}, rng), random_tensor({6, 8}, rng), q, kBoth);
    EXPECT_EQ(z.shape(), (Shape{6, 8}));
    EXPECT_TRUE(all_zero(z));
    EXPECT_EQ(p.lambda.item(), c.fovea_init);
}

TEST(Mvip, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(16);
    auto p = random_prompter(3, 6, 3, rng);
    std::vector<Parameter<double>> ps{
        {"h", random_tensor({6, 8}, rng)}, {"prev", random_tensor({6, 8}, rng)}, {"other", random_tensor({6, 8}, rng)}};
    collect(p, ps);
    for (bool on_other : {false, true}) {
        auto r = grad_check<double>(
            [&] { return probe(mvip(ps[0].value, ps[1].value, ps[2].value, p, {true, true, false, on_other})); }, ps);
        EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_tensor;
    }
}

TEST(Imvip, EqualsMvipWithoutThePromptBranch) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        auto p3 = random_prompter(3, 6, 3, rng);
        PrompterParams<double> p2{{p3.branches[0], p3.branches[1]}, p3.lambda};
        auto h = random_tensor({6, 8}, rng), prev = random_tensor({6, 8}, rng), other = random_tensor({6, 8}, rng);
        auto full = mvip(h, prev, other, p3, kBoth);
        auto prev_term = attention_stack(prev, p3.branches[2], kBoth);
        auto two = imvip(h, other, p2, kBoth);
        auto cur_term = fovea(attention_stack(h, p3.branches[0], kBoth), p3.lambda);
        auto other_term = attention_stack(other, p3.branches[1], kBoth);
        for (std::size_t i = 0; i < full.size(); ++i) {
            EXPECT_NEAR(two[i], cur_term[i] + other_term[i], 1e-14);
            EXPECT_NEAR(full[i], two[i] + prev_term[i], 1e-12);
        }
    }
}

TEST(Mvip, FlagsOffReduceToFoveaPlusInputs) {
    std::mt19937_64 rng(18);
    auto p = random_prompter(3, 6, 3, rng);
    auto h = random_tensor({6, 8}, rng), prev = random_tensor({6, 8}, rng), other = random_tensor({6, 8}, rng);
    const AttentionFlags off{false, false, false, false};
    auto y = mvip(h, prev, other, p, off);
    auto expect = add(add(fovea(h, p.lambda), other), prev);
    EXPECT_EQ(max_abs_diff(y, expect), 0.0);
}

TEST(Mvip, ZeroOtherModalityRemovesCrossTerm) {
    std::mt19937_64 rng(19);
    auto p = random_prompter(3, 6, 3, rng);
    auto h = random_tensor({6, 8}, rng), prev = random_tensor({6, 8}, rng);
    auto y = mvip(h, prev, T::zeros({6, 8}), p, kBoth);
    auto expect = add(fovea(attention_stack(h, p.branches[0], kBoth), p.lambda), attention_stack(prev, p.branches[2], kBoth));
    EXPECT_EQ(max_abs_diff(y, expect), 0.0);
}

TEST(Mvip, ShapeMismatchIsDimensionError) {
    std::mt19937_64 rng(20);
    auto p = random_prompter(3, 6, 3, rng);
    EXPECT_THROW(mvip(random_tensor({6, 8}, rng), random_tensor({6, 4}, rng), random_tensor({6, 8}, rng), p, kBoth),
                 DimensionError);
}

TEST(PrompterCount, ClosedFormAtViTBase) {
    const auto c = ModelConfig{};
    ASSERT_EQ(c.tokens(), 320u);
    const auto n = prompter_param_count(c);
    EXPECT_EQ(n.branch, 320u * 20 + 20 + 20 * 320 + 320 + 2 * 7 + 1);
    EXPECT_EQ(n.branch, 13155u);
    EXPECT_EQ(n.branch + 1, 13156u);  // one branch plus its λ
    EXPECT_EQ(n.mvip, 39466u);
    EXPECT_EQ(n.imvip, 2 * 13155u + 1);
    EXPECT_EQ(n.total, 2 * (n.imvip + 12 * n.mvip));
    // Standard ViT-B block: 12·D² + 13·D.
    const std::size_t layer = 12 * 768 * 768 + 13 * 768;
    EXPECT_EQ(layer, 7087872u);
    EXPECT_LT(static_cast<double>(n.per_layer_both), 0.02 * static_cast<double>(layer));
}

TEST(PrompterCount, MatchesBuiltParameters) {
    std::mt19937_64 rng(21);
    const auto c = config_with_tokens(2, 4, 8, 6);  // N = 18
    auto p = make_prompter<double>(3, c, rng);
    std::vector<Parameter<double>> ps;
    collect(p, ps);
    std::size_t n = 0;
    for (const auto& q : ps) n += q.value.size();
    EXPECT_EQ(n, prompter_param_count(c).mvip);
}
