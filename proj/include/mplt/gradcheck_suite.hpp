#pragma once

// Finite-difference checks of every differentiable op and of the full
// training loss at a tiny configuration.

#include <chrono>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mplt/grad_check.hpp"
#include "mplt/model.hpp"
#include "mplt/ops.hpp"
#include "mplt/prompter.hpp"

namespace mplt {

inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckCase {
    std::string name;
    GradCheckResult result;
    double seconds = 0;
    bool passed() const { return result.max_rel_error < kGradCheckTolerance; }
};

/// D=16, L=2, 3 template + 9 search tokens.
inline ModelConfig gradcheck_config() {
    ModelConfig c;
    c.patch_size = 4;
    c.embed_dim = 16;
    c.num_layers = 2;
    c.num_heads = 2;
    c.mlp_ratio = 2;
    c.template_height = 4;
    c.template_width = 12;
    c.search_size = 12;
    c.reduction_ratio = 4;
    c.head_channels = 8;
    return c;
}

namespace detail {

class CaseBuilder {
public:
    explicit CaseBuilder(std::uint64_t seed) : rng_(seed) {}

    Tensor<double> uniform(Shape shape, double lo = -1, double hi = 1) {
        std::uniform_real_distribution<double> u(lo, hi);
        std::vector<double> v(numel(shape));
        for (auto& x : v) x = u(rng_);
        return Tensor<double>::from(std::move(shape), std::move(v), true);
    }
    /// Entries with |x| in [0.1, 1], away from the kinks of relu/abs.
    Tensor<double> away_from_zero(Shape shape) {
        auto t = uniform(std::move(shape), 0.1, 1.0);
        std::bernoulli_distribution sign(0.5);
        for (auto& x : t.mutable_data()) x = sign(rng_) ? x : -x;
        return t;
    }
    std::mt19937_64& rng() { return rng_; }

private:
    std::mt19937_64 rng_;
};

inline void randomize_stages(Model<double>& m, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (auto& dir : m.mutable_params().prompters)
        for (auto& pr : dir)
            for (auto& br : pr.branches)
                for (auto* t : {&br.s2_weight, &br.s2_bias, &br.t_kernel, &br.t_bias})
                    for (auto& x : t->mutable_data()) x = u(rng);
}

}  // namespace detail

/// Runs all cases. `on_case` is called after each one.
inline std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 0,
                                                      const std::function<void(const GradCheckCase&)>& on_case = {}) {
    using T = Tensor<double>;
    using P = Parameter<double>;
    detail::CaseBuilder b(seed);
    std::vector<GradCheckCase> cases;

    // Each entry: name, parameters, graph. The graph output is contracted
    // with fixed random weights to a scalar.
    auto run = [&](const std::string& name, std::vector<P> params, std::function<T()> graph) {
        const T probe = [&] {
            NoGradGuard g;
            return graph();
        }();
        const T coeff = b.uniform(probe.shape()).detach();
        const auto start = std::chrono::steady_clock::now();
        GradCheckCase c{name, grad_check<double>([&] { return sum(mul(graph(), coeff)); }, params), 0};
        c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        cases.push_back(c);
        if (on_case) on_case(cases.back());
    };

    {
        std::vector<P> ps{{"a", b.uniform({4, 5})}, {"b", b.uniform({5, 3})}};
        run("matmul", ps, [&] { return matmul(ps[0].value, ps[1].value); });
    }
    {
        std::vector<P> ps{{"x", b.uniform({3, 4})}};
        run("transpose", ps, [&] { return transpose(ps[0].value); });
    }
    {
        std::vector<P> ps{{"a", b.uniform({3, 4})}, {"row", b.uniform({1, 4})}, {"den", b.uniform({3, 1}, 0.5, 2.0)}};
        run("broadcast add/sub/mul/div", ps, [&] {
            const auto& a = ps[0].value;
            return div(mul(add(a, ps[1].value), sub(a, ps[1].value)), ps[2].value);
        });
    }
    {
        // Distinct values keep the comparisons away from ties.
        std::vector<P> ps{{"a", b.uniform({8}, 0.0, 0.4)}, {"b", b.uniform({8}, 0.6, 1.0)}};
        run("minimum/maximum", ps, [&] {
            return concat<double>({minimum(ps[0].value, ps[1].value), maximum(ps[0].value, ps[1].value)}, 0);
        });
    }
    {
        std::vector<P> ps{{"x", b.uniform({3, 4})}};
        run("scale/add_scalar/sum/mean", ps, [&] {
            const auto& x = ps[0].value;
            return concat<double>({reshape(scale(add_scalar(x, 0.5), 3.0), {12}), sum(mul(x, x)), mean(x)}, 0);
        });
    }
    {
        std::vector<P> ps{{"x", b.uniform({5, 6})}};
        run("reduce mean/max", ps, [&] {
            const auto& x = ps[0].value;
            return add(reduce(x, 1, ReduceKind::mean), reduce(x, 1, ReduceKind::max));
        });
    }
    {
        std::vector<P> ps{{"x", b.uniform({4, 6}, -3, 3)}};
        run("softmax", ps, [&] { return concat<double>({softmax(ps[0].value, 0), softmax(ps[0].value, 1)}, 0); });
    }
    {
        std::vector<P> ps{{"x", b.uniform({4, 6})}, {"gain", b.uniform({6})}, {"bias", b.uniform({6})}};
        run("layer_norm", ps, [&] { return layer_norm(ps[0].value, ps[1].value, ps[2].value); });
    }
    {
        std::vector<P> ps{{"x", b.uniform({2, 9})}, {"kernel", b.uniform({3, 2, 7})}, {"bias", b.uniform({3})}};
        run("conv1d", ps, [&] { return conv1d(ps[0].value, ps[1].value, ps[2].value, 3); });
    }
    {
        std::vector<P> ps{{"x", b.uniform({4, 5})}, {"w", b.uniform({5, 3})}, {"b", b.uniform({3})}};
        run("affine", ps, [&] { return affine(ps[0].value, ps[1].value, ps[2].value); });
    }
    {
        std::vector<P> ps{{"x", b.away_from_zero({4, 5})}};
        run("activations/abs", ps, [&] {
            const auto& x = ps[0].value;
            return concat<double>({activation(x, Activation::relu), activation(x, Activation::gelu),
                                   activation(x, Activation::sigmoid), abs(x)},
                                  0);
        });
    }
    {
        std::vector<P> ps{{"x", b.uniform({4, 6})}};
        run("reshape/slice/concat/gather", ps, [&] {
            const auto& x = ps[0].value;
            auto r = reshape(x, {6, 4});
            auto side = concat<double>({slice(r, 0, 1, 3), slice(r, 0, 3, 3)}, 1);
            return concat<double>({reshape(side, {24}), gather(reshape(x, {24}), {0, 5, 5, 23})}, 0);
        });
    }
    {
        std::vector<P> ps{{"x", b.uniform({9, 2})}};
        run("im2col", ps, [&] { return im2col(ps[0].value, 3, 3, 3); });
    }
    {
        auto target = b.uniform({3, 3}, 0.0, 0.9);
        target.mutable_data()[4] = 1.0;
        std::vector<P> ps{{"prob", b.uniform({3, 3}, 0.05, 0.95)}};
        run("focal_loss", ps, [&] { return focal_loss(ps[0].value, target); });
    }

    const auto cfg = gradcheck_config();
    auto model = Model<double>::create(cfg, seed + 1);
    detail::randomize_stages(model, b.rng());
    const std::size_t n = cfg.tokens(), d = cfg.embed_dim;
    const AttentionFlags flags = AttentionFlags::from(cfg);
    {
        const auto& br = model.params().prompters[0][1].branches[0];
        std::vector<P> ps{{"h", b.uniform({n, d})}, {"s1", br.s1_weight}, {"s2", br.s2_weight}, {"t", br.t_kernel}};
        run("token/spatial attention", ps, [&] { return attention_stack(ps[0].value, br, flags); });
    }
    {
        std::vector<P> ps{{"h", b.uniform({n, d})}, {"lambda", b.uniform({1, 1}, 0.5, 2.0)}};
        run("fovea", ps, [&] { return fovea(ps[0].value, ps[1].value); });
    }
    {
        const auto& pr = model.params().prompters[1][1];
        std::vector<P> ps{{"cur", b.uniform({n, d})}, {"prev", b.uniform({n, d})}, {"other", b.uniform({n, d})},
                          {"lambda", pr.lambda}};
        run("mvip", ps, [&] { return mvip(ps[0].value, ps[1].value, ps[2].value, pr, flags); });
    }
    {
        const auto& e = model.params().encoders[0][1];
        std::vector<P> ps{{"h", b.uniform({n, d})}, {"qkv", e.qkv_weight}, {"fc1", e.fc1_weight}, {"ln1", e.ln1_gain}};
        run("encoder layer", ps, [&] { return encoder_layer(ps[0].value, e, cfg.num_heads); });
    }
    {
        std::vector<P> ps{{"tokens", b.uniform({n, d})}};
        for (const auto& p : model.parameters())
            if (p.name.rfind("head.score", 0) == 0) ps.push_back(p);
        run("head", ps, [&] {
            TokenSeq<double> fused{ps[0].value, cfg.template_tokens(), cfg.search_tokens(), Modality::fused};
            return head_forward(fused, model).score;
        });
    }
    {
        auto image = [&](std::size_t h, std::size_t w) {
            Image img(h, w, 3);
            std::normal_distribution<double> nd(0.0, 1.0);
            for (auto& v : img.data) v = nd(b.rng());
            return img;
        };
        const Image zr = image(cfg.template_height, cfg.template_width), zt = image(cfg.template_height, cfg.template_width);
        const Image xr = image(cfg.search_size, cfg.search_size), xt = image(cfg.search_size, cfg.search_size);
        const BBox gt{2.3, 3.1, 5.2, 4.4};
        auto ps = model.parameters();
        const auto start = std::chrono::steady_clock::now();
        GradCheckCase c{"end-to-end loss",
                        grad_check<double>(
                            [&] { return compute_loss(forward(model, zr, zt, xr, xt), gt, cfg.search_size).total; }, ps),
                        0};
        c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        cases.push_back(c);
        if (on_case) on_case(cases.back());
    }
    return cases;
}

}  // namespace mplt
