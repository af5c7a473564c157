#pragma once

// Differentiable operations over mplt::Tensor. Each op computes its forward
// values eagerly and, when any input tracks gradients, registers a closure
// that maps the output gradient onto its inputs.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "mplt/tensor.hpp"

namespace mplt {

enum class ReduceKind { mean, max };
enum class Activation { relu, gelu, sigmoid };

namespace detail {

struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

struct BroadcastPlan {
    Shape shape;
    std::vector<std::size_t> a_index, b_index;
};

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, std::string_view op) {
    if (a.size() != b.size())
        throw DimensionError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    const std::size_t rank = a.size();
    BroadcastPlan plan;
    plan.shape.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (a[i] != b[i] && a[i] != 1 && b[i] != 1)
            throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                                 shape_str(b));
        plan.shape[i] = std::max(a[i], b[i]);
    }
    const std::size_t n = numel(plan.shape);
    plan.a_index.resize(n);
    plan.b_index.resize(n);
    std::vector<std::size_t> stride_a(rank), stride_b(rank);
    std::size_t sa = 1, sb = 1;
    for (std::size_t i = rank; i-- > 0;) {
        stride_a[i] = a[i] == 1 ? 0 : sa;
        stride_b[i] = b[i] == 1 ? 0 : sb;
        sa *= a[i];
        sb *= b[i];
    }
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t lin = 0; lin < n; ++lin) {
        std::size_t ia = 0, ib = 0;
        for (std::size_t d = 0; d < rank; ++d) {
            ia += idx[d] * stride_a[d];
            ib += idx[d] * stride_b[d];
        }
        plan.a_index[lin] = ia;
        plan.b_index[lin] = ib;
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < plan.shape[d]) break;
            idx[d] = 0;
        }
    }
    return plan;
}

template <typename Real>
void gemm_accumulate(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
    // c[m×n] += a[m×k] · b[k×n]
    for (std::size_t i = 0; i < m; ++i) {
        Real* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = a[i * k + p];
            if (av == Real(0)) continue;
            const Real* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename Real>
void gemm_nt_accumulate(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
    // c[m×n] += a[m×k] · b[n×k]ᵀ
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            Real acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
            c[i * n + j] += acc;
        }
}

template <typename Real>
void gemm_tn_accumulate(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
    // c[k×n] += a[m×k]ᵀ · b[m×n]
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = a[i * k + p];
            if (av == Real(0)) continue;
            Real* crow = c + p * n;
            const Real* brow = b + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
}

inline void require_rank(const Shape& s, std::size_t rank, std::string_view op) {
    if (s.size() != rank)
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(s));
}

}  // namespace detail

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_rank(a.shape(), 2, "matmul");
    detail::require_rank(b.shape(), 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<Real> out(m * n, Real(0));
    detail::gemm_accumulate(a.data().data(), b.data().data(), out.data(), m, k, n);
    return Tensor<Real>::make_result("matmul", {m, n}, std::move(out), {&a, &b},
                                     [a, b, m, k, n](std::span<const Real> g) {
                                         if (auto ga = Tensor<Real>::input_grad(a); !ga.empty())
                                             detail::gemm_nt_accumulate(g.data(), b.data().data(), ga.data(), m, n, k);
                                         if (auto gb = Tensor<Real>::input_grad(b); !gb.empty())
                                             detail::gemm_tn_accumulate(a.data().data(), g.data(), gb.data(), m, k, n);
                                     });
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& x) {
    detail::require_rank(x.shape(), 2, "transpose");
    const std::size_t r = x.dim(0), c = x.dim(1);
    std::vector<Real> out(r * c);
    auto v = x.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
    return Tensor<Real>::make_result("transpose", {c, r}, std::move(out), {&x}, [x, r, c](std::span<const Real> g) {
        auto gx = Tensor<Real>::input_grad(x);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    });
}

namespace detail {

template <typename Real, typename Fwd, typename DA, typename DB>
Tensor<Real> broadcast_binary(std::string_view op, const Tensor<Real>& a, const Tensor<Real>& b, Fwd fwd, DA da,
                              DB db) {
    auto plan = std::make_shared<BroadcastPlan>(broadcast_plan(a.shape(), b.shape(), op));
    const std::size_t n = plan->a_index.size();
    std::vector<Real> out(n);
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[plan->a_index[i]], bv[plan->b_index[i]]);
    return Tensor<Real>::make_result(op, plan->shape, std::move(out), {&a, &b},
                                     [a, b, plan, da, db](std::span<const Real> g) {
                                         auto ga = Tensor<Real>::input_grad(a);
                                         auto gb = Tensor<Real>::input_grad(b);
                                         auto av = a.data();
                                         auto bv = b.data();
                                         for (std::size_t i = 0; i < g.size(); ++i) {
                                             const Real x = av[plan->a_index[i]], y = bv[plan->b_index[i]];
                                             if (!ga.empty()) ga[plan->a_index[i]] += g[i] * da(x, y);
                                             if (!gb.empty()) gb[plan->b_index[i]] += g[i] * db(x, y);
                                         }
                                     });
}

}  // namespace detail

/// Elementwise ops broadcast same-rank operands along extent-1 axes.
template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::broadcast_binary<Real>(
        "add", a, b, [](Real x, Real y) { return x + y; }, [](Real, Real) { return Real(1); },
        [](Real, Real) { return Real(1); });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::broadcast_binary<Real>(
        "sub", a, b, [](Real x, Real y) { return x - y; }, [](Real, Real) { return Real(1); },
        [](Real, Real) { return Real(-1); });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::broadcast_binary<Real>(
        "mul", a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y) { return y; },
        [](Real x, Real) { return x; });
}

template <typename Real>
Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::broadcast_binary<Real>(
        "div", a, b, [](Real x, Real y) { return x / y; }, [](Real, Real y) { return Real(1) / y; },
        [](Real x, Real y) { return -x / (y * y); });
}

// Ties route the gradient to the first operand.
template <typename Real>
Tensor<Real> minimum(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::broadcast_binary<Real>(
        "minimum", a, b, [](Real x, Real y) { return std::min(x, y); },
        [](Real x, Real y) { return x <= y ? Real(1) : Real(0); },
        [](Real x, Real y) { return x <= y ? Real(0) : Real(1); });
}

template <typename Real>
Tensor<Real> maximum(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::broadcast_binary<Real>(
        "maximum", a, b, [](Real x, Real y) { return std::max(x, y); },
        [](Real x, Real y) { return x >= y ? Real(1) : Real(0); },
        [](Real x, Real y) { return x >= y ? Real(0) : Real(1); });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, Real c) {
    std::vector<Real> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= c;
    return Tensor<Real>::make_result("scale", x.shape(), std::move(out), {&x}, [x, c](std::span<const Real> g) {
        auto gx = Tensor<Real>::input_grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
    });
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& x, Real c) {
    std::vector<Real> out(x.data().begin(), x.data().end());
    for (auto& v : out) v += c;
    return Tensor<Real>::make_result("add_scalar", x.shape(), std::move(out), {&x}, [x](std::span<const Real> g) {
        auto gx = Tensor<Real>::input_grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
    Real s = 0;
    for (auto v : x.data()) s += v;
    return Tensor<Real>::make_result("sum", {1}, {s}, {&x}, [x](std::span<const Real> g) {
        auto gx = Tensor<Real>::input_grad(x);
        for (auto& v : gx) v += g[0];
    });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x) {
    return scale(sum(x), Real(1) / static_cast<Real>(x.size()));
}

/// Mean or max along one axis. With keepdim the axis stays as extent 1.
/// Max routes its gradient to the first arg-max on ties.
template <typename Real>
Tensor<Real> reduce(const Tensor<Real>& x, std::size_t axis, ReduceKind kind, bool keepdim = true) {
    const auto s = detail::split_axis(x.shape(), axis);
    Shape out_shape = x.shape();
    if (keepdim)
        out_shape[axis] = 1;
    else
        out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape = {1};
    std::vector<Real> out(s.outer * s.inner);
    auto v = x.data();
    auto argmax = std::make_shared<std::vector<std::size_t>>();
    if (kind == ReduceKind::max) argmax->resize(out.size());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            if (kind == ReduceKind::mean) {
                Real acc = 0;
                for (std::size_t a = 0; a < s.extent; ++a) acc += v[base + a * s.inner];
                out[o * s.inner + i] = acc / static_cast<Real>(s.extent);
            } else {
                std::size_t best = base;
                for (std::size_t a = 1; a < s.extent; ++a)
                    if (v[base + a * s.inner] > v[best]) best = base + a * s.inner;
                out[o * s.inner + i] = v[best];
                (*argmax)[o * s.inner + i] = best;
            }
        }
    const std::string_view name = kind == ReduceKind::mean ? "reduce_mean" : "reduce_max";
    return Tensor<Real>::make_result(name, std::move(out_shape), std::move(out), {&x},
                                     [x, s, kind, argmax](std::span<const Real> g) {
                                         auto gx = Tensor<Real>::input_grad(x);
                                         for (std::size_t o = 0; o < s.outer; ++o)
                                             for (std::size_t i = 0; i < s.inner; ++i) {
                                                 const std::size_t oi = o * s.inner + i;
                                                 if (kind == ReduceKind::max) {
                                                     gx[(*argmax)[oi]] += g[oi];
                                                 } else {
                                                     const Real share = g[oi] / static_cast<Real>(s.extent);
                                                     const std::size_t base = o * s.extent * s.inner + i;
                                                     for (std::size_t a = 0; a < s.extent; ++a)
                                                         gx[base + a * s.inner] += share;
                                                 }
                                             }
                                     });
}

/// Numerically stable softmax (max-subtracted) along `axis`.
template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::size_t axis) {
    const auto s = detail::split_axis(x.shape(), axis);
    std::vector<Real> out(x.size());
    auto v = x.data();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            Real m = v[base];
            for (std::size_t a = 1; a < s.extent; ++a) m = std::max(m, v[base + a * s.inner]);
            Real z = 0;
            for (std::size_t a = 0; a < s.extent; ++a) {
                const Real e = std::exp(v[base + a * s.inner] - m);
                out[base + a * s.inner] = e;
                z += e;
            }
            for (std::size_t a = 0; a < s.extent; ++a) out[base + a * s.inner] /= z;
        }
    auto y = std::make_shared<std::vector<Real>>(out);
    return Tensor<Real>::make_result("softmax", x.shape(), std::move(out), {&x}, [x, s, y](std::span<const Real> g) {
        auto gx = Tensor<Real>::input_grad(x);
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t base = o * s.extent * s.inner + i;
                Real dot = 0;
                for (std::size_t a = 0; a < s.extent; ++a) dot += g[base + a * s.inner] * (*y)[base + a * s.inner];
                for (std::size_t a = 0; a < s.extent; ++a) {
                    const std::size_t k = base + a * s.inner;
                    gx[k] += (*y)[k] * (g[k] - dot);
                }
            }
    });
}

/// Normalizes each row over the last axis, then applies gain and bias.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                        Real eps = Real(1e-6)) {
    const std::size_t d = x.shape().back();
    if (gain.size() != d || bias.size() != d)
        throw DimensionError("layer_norm: gain/bias length must equal " + std::to_string(d));
    const std::size_t rows = x.size() / d;
    auto v = x.data();
    auto gv = gain.data();
    auto bv = bias.data();
    auto xhat = std::make_shared<std::vector<Real>>(x.size());
    auto inv_std = std::make_shared<std::vector<Real>>(rows);
    std::vector<Real> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = v.data() + r * d;
        Real mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<Real>(d);
        Real var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<Real>(d);
        const Real is = Real(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const Real h = (row[j] - mu) * is;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = h * gv[j] + bv[j];
        }
    }
    return Tensor<Real>::make_result(
        "layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
        [x, gain, bias, d, rows, xhat, inv_std](std::span<const Real> g) {
            auto gx = Tensor<Real>::input_grad(x);
            auto gg = Tensor<Real>::input_grad(gain);
            auto gb = Tensor<Real>::input_grad(bias);
            auto gv = gain.data();
            std::vector<Real> dxhat(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* gr = g.data() + r * d;
                const Real* hr = xhat->data() + r * d;
                Real s1 = 0, s2 = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    if (!gg.empty()) gg[j] += gr[j] * hr[j];
                    if (!gb.empty()) gb[j] += gr[j];
                    dxhat[j] = gr[j] * gv[j];
                    s1 += dxhat[j];
                    s2 += dxhat[j] * hr[j];
                }
                if (gx.empty()) continue;
                const Real k = (*inv_std)[r] / static_cast<Real>(d);
                for (std::size_t j = 0; j < d; ++j)
                    gx[r * d + j] += k * (static_cast<Real>(d) * dxhat[j] - s1 - hr[j] * s2);
            }
        });
}

/// Length-preserving 1-D cross-correlation with zero padding.
/// x: [C_in×L], kernels: [C_out×C_in×k], bias: [C_out].
template <typename Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& kernels, const Tensor<Real>& bias,
                    std::size_t padding) {
    detail::require_rank(x.shape(), 2, "conv1d");
    detail::require_rank(kernels.shape(), 3, "conv1d");
    const std::size_t cin = x.dim(0), len = x.dim(1);
    const std::size_t cout = kernels.dim(0), k = kernels.dim(2);
    if (k % 2 == 0) throw ConfigError("conv1d: kernel size must be odd, got " + std::to_string(k));
    if (padding != (k - 1) / 2)
        throw ConfigError("conv1d: padding must be (k-1)/2 = " + std::to_string((k - 1) / 2));
    if (kernels.dim(1) != cin)
        throw DimensionError("conv1d: kernel channels " + std::to_string(kernels.dim(1)) + " != input channels " +
                             std::to_string(cin));
    if (bias.size() != cout) throw DimensionError("conv1d: bias length must equal output channels");
    auto xv = x.data();
    auto wv = kernels.data();
    auto bv = bias.data();
    std::vector<Real> out(cout * len);
    const auto pad = static_cast<std::ptrdiff_t>(padding);
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t t = 0; t < len; ++t) {
            Real acc = bv[o];
            for (std::size_t c = 0; c < cin; ++c)
                for (std::size_t j = 0; j < k; ++j) {
                    const auto src = static_cast<std::ptrdiff_t>(t + j) - pad;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                    acc += wv[(o * cin + c) * k + j] * xv[c * len + static_cast<std::size_t>(src)];
                }
            out[o * len + t] = acc;
        }
    return Tensor<Real>::make_result(
        "conv1d", {cout, len}, std::move(out), {&x, &kernels, &bias},
        [x, kernels, bias, cin, len, cout, k, pad](std::span<const Real> g) {
            auto gx = Tensor<Real>::input_grad(x);
            auto gw = Tensor<Real>::input_grad(kernels);
            auto gb = Tensor<Real>::input_grad(bias);
            auto xv = x.data();
            auto wv = kernels.data();
            for (std::size_t o = 0; o < cout; ++o)
                for (std::size_t t = 0; t < len; ++t) {
                    const Real go = g[o * len + t];
                    if (!gb.empty()) gb[o] += go;
                    for (std::size_t c = 0; c < cin; ++c)
                        for (std::size_t j = 0; j < k; ++j) {
                            const auto src = static_cast<std::ptrdiff_t>(t + j) - pad;
                            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                            const auto s = static_cast<std::size_t>(src);
                            if (!gw.empty()) gw[(o * cin + c) * k + j] += go * xv[c * len + s];
                            if (!gx.empty()) gx[c * len + s] += go * wv[(o * cin + c) * k + j];
                        }
                }
        });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
    if (numel(shape) != x.size())
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    std::vector<Real> out(x.data().begin(), x.data().end());
    return Tensor<Real>::make_result("reshape", std::move(shape), std::move(out), {&x}, [x](std::span<const Real> g) {
        auto gx = Tensor<Real>::input_grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

/// y = x·W + b over the trailing axis; leading axes are flattened rows.
template <typename Real>
Tensor<Real> affine(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
    detail::require_rank(weight.shape(), 2, "affine");
    const std::size_t fin = weight.dim(0), fout = weight.dim(1);
    if (x.shape().back() != fin)
        throw DimensionError("affine: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
    if (bias.size() != fout) throw DimensionError("affine: bias length must equal " + std::to_string(fout));
    const std::size_t rows = x.size() / fin;
    std::vector<Real> out(rows * fout);
    auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), out.begin() + r * fout);
    detail::gemm_accumulate(x.data().data(), weight.data().data(), out.data(), rows, fin, fout);
    Shape shape = x.shape();
    shape.back() = fout;
    return Tensor<Real>::make_result("affine", std::move(shape), std::move(out), {&x, &weight, &bias},
                                     [x, weight, bias, rows, fin, fout](std::span<const Real> g) {
                                         if (auto gx = Tensor<Real>::input_grad(x); !gx.empty())
                                             detail::gemm_nt_accumulate(g.data(), weight.data().data(), gx.data(),
                                                                        rows, fout, fin);
                                         if (auto gw = Tensor<Real>::input_grad(weight); !gw.empty())
                                             detail::gemm_tn_accumulate(x.data().data(), g.data(), gw.data(), rows,
                                                                        fin, fout);
                                         if (auto gb = Tensor<Real>::input_grad(bias); !gb.empty())
                                             for (std::size_t r = 0; r < rows; ++r)
                                                 for (std::size_t j = 0; j < fout; ++j) gb[j] += g[r * fout + j];
                                     });
}

namespace detail {

template <typename Real, typename F, typename DF>
Tensor<Real> unary(std::string_view op, const Tensor<Real>& x, F f, DF df) {
    auto v = x.data();
    std::vector<Real> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = f(v[i]);
    return Tensor<Real>::make_result(op, x.shape(), std::move(out), {&x}, [x, df](std::span<const Real> g) {
        auto gx = Tensor<Real>::input_grad(x);
        auto v = x.data();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(v[i]);
    });
}

template <typename Real>
constexpr Real gelu_k = static_cast<Real>(0.7978845608028654);  // sqrt(2/pi)

}  // namespace detail

/// Elementwise activation. gelu is the tanh approximation
/// 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
template <typename Real>
Tensor<Real> activation(const Tensor<Real>& x, Activation kind) {
    switch (kind) {
        case Activation::relu:
            return detail::unary<Real>(
                "relu", x, [](Real v) { return v > 0 ? v : Real(0); }, [](Real v) { return v > 0 ? Real(1) : Real(0); });
        case Activation::gelu:
            return detail::unary<Real>(
                "gelu", x,
                [](Real v) {
                    const Real u = detail::gelu_k<Real> * (v + Real(0.044715) * v * v * v);
                    return Real(0.5) * v * (Real(1) + std::tanh(u));
                },
                [](Real v) {
                    const Real u = detail::gelu_k<Real> * (v + Real(0.044715) * v * v * v);
                    const Real t = std::tanh(u);
                    const Real du = detail::gelu_k<Real> * (Real(1) + Real(3 * 0.044715) * v * v);
                    return Real(0.5) * (Real(1) + t) + Real(0.5) * v * (Real(1) - t * t) * du;
                });
        case Activation::sigmoid:
            return detail::unary<Real>(
                "sigmoid", x, [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
                [](Real v) {
                    const Real s = Real(1) / (Real(1) + std::exp(-v));
                    return s * (Real(1) - s);
                });
    }
    throw ConfigError("unknown activation");
}

template <typename Real>
Tensor<Real> abs(const Tensor<Real>& x) {
    return detail::unary<Real>(
        "abs", x, [](Real v) { return std::abs(v); },
        [](Real v) { return v > 0 ? Real(1) : (v < 0 ? Real(-1) : Real(0)); });
}

/// Concatenation along `axis`; all other extents must agree.
template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    Shape shape = parts.front().shape();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != shape.size()) throw DimensionError("concat: rank mismatch");
        for (std::size_t d = 0; d < shape.size(); ++d)
            if (d != axis && p.dim(d) != shape[d])
                throw DimensionError("concat: extent mismatch " + shape_str(p.shape()) + " vs " + shape_str(shape));
        total += p.dim(axis);
    }
    shape[axis] = total;
    const auto s = detail::split_axis(shape, axis);
    std::vector<Real> out(numel(shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t ext = p.dim(axis);
        auto v = p.data();
        for (std::size_t o = 0; o < s.outer; ++o)
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * ext * s.inner), ext * s.inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * total + off) * s.inner));
        off += ext;
    }
    auto out_t = Tensor<Real>::make_result("concat", shape, std::move(out), {}, [](std::span<const Real>) {});
    if (!grad_mode_enabled()) return out_t;
    bool tracked = false;
    for (const auto& p : parts) tracked = tracked || p.requires_grad();
    if (!tracked) return out_t;
    // Variadic parents: wire the node by hand.
    auto node = out_t.node();
    node->requires_grad = true;
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backward = [parts, offsets, s, total](std::span<const Real> g) {
        for (std::size_t idx = 0; idx < parts.size(); ++idx) {
            auto gp = Tensor<Real>::input_grad(parts[idx]);
            if (gp.empty()) continue;
            const std::size_t ext = gp.size() / (s.outer * s.inner);
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t e = 0; e < ext * s.inner; ++e)
                    gp[o * ext * s.inner + e] += g[(o * total + offsets[idx]) * s.inner + e];
        }
    };
    return out_t;
}

template <typename Real>
Tensor<Real> slice(const Tensor<Real>& x, std::size_t axis, std::size_t start, std::size_t length) {
    const auto s = detail::split_axis(x.shape(), axis);
    if (length == 0 || start + length > s.extent)
        throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") out of range for " + shape_str(x.shape()));
    Shape shape = x.shape();
    shape[axis] = length;
    std::vector<Real> out(numel(shape));
    auto v = x.data();
    for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((o * s.extent + start) * s.inner), length * s.inner,
                    out.begin() + static_cast<std::ptrdiff_t>(o * length * s.inner));
    return Tensor<Real>::make_result("slice", std::move(shape), std::move(out), {&x},
                                     [x, s, start, length](std::span<const Real> g) {
                                         auto gx = Tensor<Real>::input_grad(x);
                                         for (std::size_t o = 0; o < s.outer; ++o)
                                             for (std::size_t e = 0; e < length * s.inner; ++e)
                                                 gx[(o * s.extent + start) * s.inner + e] +=
                                                     g[o * length * s.inner + e];
                                     });
}

/// Gathers k×k neighbourhoods of a [H·W×C] feature map (positions × channels)
/// into [H·W × k·k·C] rows; out-of-map neighbours are zero.
template <typename Real>
Tensor<Real> im2col(const Tensor<Real>& x, std::size_t height, std::size_t width, std::size_t k) {
    detail::require_rank(x.shape(), 2, "im2col");
    if (x.dim(0) != height * width) throw DimensionError("im2col: row count must equal height*width");
    if (k % 2 == 0) throw ConfigError("im2col: kernel size must be odd");
    const std::size_t c = x.dim(1);
    const auto half = static_cast<std::ptrdiff_t>(k / 2);
    // src[i] = source element for output element i, or npos for padding.
    constexpr std::size_t npos = static_cast<std::size_t>(-1);
    auto src = std::make_shared<std::vector<std::size_t>>(height * width * k * k * c, npos);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t xx = 0; xx < width; ++xx)
            for (std::size_t dy = 0; dy < k; ++dy)
                for (std::size_t dx = 0; dx < k; ++dx) {
                    const auto sy = static_cast<std::ptrdiff_t>(y + dy) - half;
                    const auto sx = static_cast<std::ptrdiff_t>(xx + dx) - half;
                    if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(height) ||
                        sx >= static_cast<std::ptrdiff_t>(width))
                        continue;
                    const std::size_t row = static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx);
                    const std::size_t base = ((y * width + xx) * k * k + dy * k + dx) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) (*src)[base + ch] = row * c + ch;
                }
    auto v = x.data();
    std::vector<Real> out(src->size(), Real(0));
    for (std::size_t i = 0; i < src->size(); ++i)
        if ((*src)[i] != npos) out[i] = v[(*src)[i]];
    return Tensor<Real>::make_result("im2col", {height * width, k * k * c}, std::move(out), {&x},
                                     [x, src](std::span<const Real> g) {
                                         auto gx = Tensor<Real>::input_grad(x);
                                         for (std::size_t i = 0; i < src->size(); ++i)
                                             if ((*src)[i] != npos) gx[(*src)[i]] += g[i];
                                     });
}

/// Picks flat elements by index into a 1-D tensor.
template <typename Real>
Tensor<Real> gather(const Tensor<Real>& x, std::vector<std::size_t> indices) {
    auto v = x.data();
    std::vector<Real> out;
    out.reserve(indices.size());
    for (auto i : indices) {
        if (i >= v.size()) throw DimensionError("gather: index out of range");
        out.push_back(v[i]);
    }
    auto idx = std::make_shared<std::vector<std::size_t>>(std::move(indices));
    return Tensor<Real>::make_result("gather", {idx->size()}, std::move(out), {&x}, [x, idx](std::span<const Real> g) {
        auto gx = Tensor<Real>::input_grad(x);
        for (std::size_t i = 0; i < idx->size(); ++i) gx[(*idx)[i]] += g[i];
    });
}

/// CenterNet-style penalty-reduced focal loss on probabilities against a
/// Gaussian heatmap; positives are cells where target == 1. Probabilities are
/// clamped to [1e-4, 1 - 1e-4] and the sum is normalized by the positive count.
template <typename Real>
Tensor<Real> focal_loss(const Tensor<Real>& prob, const Tensor<Real>& target, Real alpha = 2, Real beta = 4) {
    if (prob.shape() != target.shape()) throw DimensionError("focal_loss: shape mismatch");
    constexpr Real lo = Real(1e-4), hi = Real(1) - Real(1e-4);
    auto p = prob.data();
    auto t = target.data();
    std::size_t num_pos = 0;
    Real total = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Real q = std::clamp(p[i], lo, hi);
        if (t[i] == Real(1)) {
            ++num_pos;
            total -= std::pow(Real(1) - q, alpha) * std::log(q);
        } else {
            total -= std::pow(Real(1) - t[i], beta) * std::pow(q, alpha) * std::log(Real(1) - q);
        }
    }
    const Real norm = Real(1) / static_cast<Real>(std::max<std::size_t>(num_pos, 1));
    return Tensor<Real>::make_result(
        "focal_loss", {1}, {total * norm}, {&prob}, [prob, target, alpha, beta, norm](std::span<const Real> g) {
            auto gp = Tensor<Real>::input_grad(prob);
            auto p = prob.data();
            auto t = target.data();
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (p[i] < lo || p[i] > hi) continue;  // clamped: flat
                const Real q = p[i];
                Real d;
                if (t[i] == Real(1))
                    d = alpha * std::pow(Real(1) - q, alpha - 1) * std::log(q) - std::pow(Real(1) - q, alpha) / q;
                else
                    d = -std::pow(Real(1) - t[i], beta) *
                        (alpha * std::pow(q, alpha - 1) * std::log(Real(1) - q) - std::pow(q, alpha) / (Real(1) - q));
                gp[i] += g[0] * norm * d;
            }
        });
}

}  // namespace mplt
