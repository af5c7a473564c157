#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace mplt;
using mplt::testing::random_tensor;
using T = Tensor<double>;

namespace {

std::vector<double> values(const T& t) { return {t.data().begin(), t.data().end()}; }

// Weighted sum against fixed random coefficients: a scalar whose gradient
// exercises every output element differently.
T probe(const T& y, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    return sum(mul(y, random_tensor(y.shape(), rng, -1, 1, false)));
}

}  // namespace

TEST(Matmul, IdentityLeavesOperandUnchanged) {
    auto id = T::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto a = T::from({3, 2}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(values(matmul(id, a)), values(a));
}

TEST(Matmul, SmallProduct) {
    auto y = matmul(T::from({2, 2}, {1, 2, 3, 4}), T::from({2, 1}, {1, 1}));
    EXPECT_EQ(y.shape(), (Shape{2, 1}));
    EXPECT_EQ(values(y), (std::vector<double>{3, 7}));
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(1);
    std::vector<Parameter<double>> ps{{"a", random_tensor({5, 7}, rng)}, {"b", random_tensor({7, 3}, rng)}};
    auto r = grad_check<double>([&] { return probe(matmul(ps[0].value, ps[1].value)); }, ps);
    EXPECT_LT(r.max_rel_error, 1e-6);
    EXPECT_EQ(r.elements_checked, 35u + 21u);
}

TEST(Matmul, InnerMismatchIsDimensionError) {
    EXPECT_THROW(matmul(T::zeros({2, 3}), T::zeros({2, 3})), DimensionError);
}

TEST(Softmax, ZerosGiveUniform) {
    auto y = softmax(T::zeros({1, 5}), 1);
    for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(Softmax, LogTwoPair) {
    auto y = softmax(T::from({2}, {0.0, std::log(2.0)}), 0);
    EXPECT_NEAR(y[0], 1.0 / 3, 1e-15);
    EXPECT_NEAR(y[1], 2.0 / 3, 1e-15);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(2);
    std::vector<Parameter<double>> ps{{"x", random_tensor({4, 6}, rng, -3, 3)}};
    for (std::size_t axis : {0u, 1u}) {
        auto r = grad_check<double>([&] { return probe(softmax(ps[0].value, axis)); }, ps);
        EXPECT_LT(r.max_rel_error, 1e-6) << "axis " << axis;
    }
}

TEST(Softmax, RowsSumToOneForLargeInputs) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = random_tensor({7, 9}, rng, -500, 500, false);
        auto y = softmax(x, 1);
        for (std::size_t r = 0; r < 7; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < 9; ++c) {
                EXPECT_GE(y.at(r, c), 0.0);
                s += y.at(r, c);
            }
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
}

TEST(LayerNorm, ConstantRowMapsToZero) {
    auto y = layer_norm(T::full({2, 4}, 3.5), T::full({4}, 1.0), T::zeros({4}));
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoElementRow) {
    auto y = layer_norm(T::from({1, 2}, {1, 3}), T::full({2}, 1.0), T::zeros({2}));
    const double expect = 1.0 / std::sqrt(1.0 + 1e-6);
    EXPECT_NEAR(y[0], -expect, 1e-15);
    EXPECT_NEAR(y[1], expect, 1e-15);
    EXPECT_NEAR(y[1], 1.0, 1e-6);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(4);
    std::vector<Parameter<double>> ps{
        {"x", random_tensor({3, 8}, rng)}, {"g", random_tensor({8}, rng)}, {"b", random_tensor({8}, rng)}};
    auto r = grad_check<double>([&] { return probe(layer_norm(ps[0].value, ps[1].value, ps[2].value)); }, ps);
    EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Reduce, MeanOfConstant) {
    auto y = reduce(T::full({3, 4}, 2.5), 1, ReduceKind::mean);
    EXPECT_EQ(y.shape(), (Shape{3, 1}));
    for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(Reduce, MaxAndGradientMask) {
    auto x = T::from({3}, {1, 5, 3}, true);
    auto y = reduce(x, 0, ReduceKind::max);
    EXPECT_EQ(y.item(), 5.0);
    y.backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 0}));
}

TEST(Reduce, MaxTiesRouteToLowestIndex) {
    auto x = T::from({4}, {2, 7, 7, 1}, true);
    reduce(x, 0, ReduceKind::max).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 0, 0}));
}

TEST(Reduce, ShapesAlongBothAxes) {
    auto x = T::zeros({320, 768});
    EXPECT_EQ(reduce(x, 1, ReduceKind::mean).shape(), (Shape{320, 1}));
    EXPECT_EQ(reduce(x, 0, ReduceKind::max).shape(), (Shape{1, 768}));
    EXPECT_EQ(reduce(x, 0, ReduceKind::mean, false).shape(), (Shape{768}));
}

TEST(Reduce, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(5);
    std::vector<Parameter<double>> ps{{"x", random_tensor({5, 6}, rng)}};
    for (auto kind : {ReduceKind::mean, ReduceKind::max})
        for (std::size_t axis : {0u, 1u}) {
            auto r = grad_check<double>([&] { return probe(reduce(ps[0].value, axis, kind)); }, ps);
            EXPECT_LT(r.max_rel_error, 1e-6);
        }
}

TEST(Conv1d, UnitKernelIsIdentity) {
    auto x = T::from({1, 4}, {1, -2, 3, 4});
    auto y = conv1d(x, T::from({1, 1, 1}, {1}), T::zeros({1}), 0);
    EXPECT_EQ(values(y), values(x));
}

TEST(Conv1d, BoxKernelWithPadding) {
    auto y = conv1d(T::from({1, 3}, {1, 2, 3}), T::full({1, 1, 3}, 1.0), T::zeros({1}), 1);
    EXPECT_EQ(values(y), (std::vector<double>{3, 6, 5}));
}

TEST(Conv1d, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(6);
    std::vector<Parameter<double>> ps{
        {"x", random_tensor({2, 16}, rng)}, {"k", random_tensor({1, 2, 7}, rng)}, {"b", random_tensor({1}, rng)}};
    auto r = grad_check<double>([&] { return probe(conv1d(ps[0].value, ps[1].value, ps[2].value, 3)); }, ps);
    EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Conv1d, EvenKernelOrWrongPaddingIsConfigError) {
    EXPECT_THROW(conv1d(T::zeros({1, 5}), T::zeros({1, 1, 4}), T::zeros({1}), 1), ConfigError);
    EXPECT_THROW(conv1d(T::zeros({1, 5}), T::zeros({1, 1, 3}), T::zeros({1}), 0), ConfigError);
}

TEST(Conv1d, ZeroWeightsGiveExactZero) {
    std::mt19937_64 rng(7);
    auto y = conv1d(random_tensor({2, 30}, rng, -1e6, 1e6), T::zeros({1, 2, 7}), T::zeros({1}), 3);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Affine, IdentityWeight) {
    std::mt19937_64 rng(8);
    auto x = random_tensor({4, 3}, rng);
    auto y = affine(x, T::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}), T::zeros({3}));
    EXPECT_EQ(values(y), values(x));
}

TEST(Affine, ZeroWeightGivesExactZero) {
    std::mt19937_64 rng(9);
    auto y = affine(random_tensor({2, 5, 3}, rng, -1e8, 1e8), T::zeros({3, 4}), T::zeros({4}));
    EXPECT_EQ(y.shape(), (Shape{2, 5, 4}));
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Affine, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(10);
    std::vector<Parameter<double>> ps{
        {"x", random_tensor({6, 5}, rng)}, {"w", random_tensor({5, 4}, rng)}, {"b", random_tensor({4}, rng)}};
    auto r = grad_check<double>([&] { return probe(affine(ps[0].value, ps[1].value, ps[2].value)); }, ps);
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Affine, ShapeMismatch) { EXPECT_THROW(affine(T::zeros({2, 3}), T::zeros({4, 2}), T::zeros({2})), DimensionError); }

TEST(Activation, ReluAndGeluValues) {
    auto r = activation(T::from({2}, {-2, 3}), Activation::relu);
    EXPECT_EQ(values(r), (std::vector<double>{0, 3}));
    EXPECT_EQ(activation(T::scalar(0), Activation::gelu).item(), 0.0);
    // tanh approximation at 1: 0.5·(1 + tanh(√(2/π)·1.044715)).
    EXPECT_NEAR(activation(T::scalar(1), Activation::gelu).item(), 0.8411919906082768, 1e-12);
}

TEST(Activation, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(11);
    std::vector<Parameter<double>> ps{{"x", random_tensor({3, 7}, rng, -3, 3)}};
    for (auto kind : {Activation::gelu, Activation::sigmoid, Activation::relu}) {
        auto r = grad_check<double>([&] { return probe(activation(ps[0].value, kind)); }, ps);
        EXPECT_LT(r.max_rel_error, 1e-5);
    }
}

TEST(GradCheck, SumOfSquares) {
    std::vector<Parameter<double>> ps{{"x", T::from({2}, {1, 2}, true)}};
    auto f = [&] { return sum(mul(ps[0].value, ps[0].value)); };
    auto loss = f();
    loss.backward();
    EXPECT_EQ(std::vector<double>(ps[0].value.grad().begin(), ps[0].value.grad().end()), (std::vector<double>{2, 4}));
    ps[0].value.zero_grad();
    EXPECT_LT(grad_check<double>(f, ps).max_rel_error, 1e-9);
}

TEST(GradCheck, StructuralOpsMatchFiniteDifferences) {
    std::mt19937_64 rng(12);
    std::vector<Parameter<double>> ps{{"a", random_tensor({3, 4}, rng)}, {"b", random_tensor({3, 2}, rng)},
                                      {"c", random_tensor({1, 4}, rng, 0.5, 2)}};
    auto& a = ps[0].value;
    auto& b = ps[1].value;
    auto& c = ps[2].value;
    auto f = [&] {
        auto cat = concat<double>({a, b}, 1);                               // 3×6
        auto part = slice(transpose(cat), 0, 1, 4);                          // 4×3
        auto q = div(sub(a, c), add(mul(c, c), T::full({1, 4}, 1.0)));      // broadcast
        auto m = add(minimum(a, q), maximum(scale(a, 0.5), add_scalar(q, 0.1)));
        auto g = gather(reshape(part, {12}), {0, 5, 11, 5});
        return add(add(probe(m), sum(abs(g))), mean(im2col(reshape(cat, {9, 2}), 3, 3, 3)));
    };
    EXPECT_LT(grad_check<double>(f, ps).max_rel_error, 1e-6);
}

TEST(GradCheck, FocalLossMatchesFiniteDifferences) {
    std::mt19937_64 rng(13);
    std::vector<Parameter<double>> ps{{"p", random_tensor({4, 4}, rng, 0.05, 0.95)}};
    auto target = T::from({4, 4}, {0, 0.2, 0, 0, 0.3, 1, 0.5, 0, 0, 0.4, 0, 0, 0, 0, 0, 0});
    auto r = grad_check<double>([&] { return focal_loss(ps[0].value, target); }, ps);
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Numeric, NonFiniteOutputNamesTheOperation) {
    try {
        div(T::scalar(1.0), T::scalar(0.0));
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("div"), std::string::npos);
    }
    EXPECT_THROW(scale(T::scalar(1e300), 1e10), NumericError);
}

TEST(Numeric, OperationsAreBitDeterministic) {
    auto run = [] {
        std::mt19937_64 rng(14);
        auto x = random_tensor({6, 8}, rng);
        auto w = random_tensor({8, 8}, rng);
        auto y = layer_norm(softmax(affine(x, w, T::zeros({8})), 1), T::full({8}, 1.0), T::zeros({8}));
        auto l = probe(y);
        l.backward();
        auto out = values(y);
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    EXPECT_EQ(run(), run());
}

TEST(Numeric, NoGradGuardSkipsRecording) {
    auto x = T::from({2}, {1, 2}, true);
    {
        NoGradGuard guard;
        EXPECT_FALSE(mul(x, x).requires_grad());
    }
    EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Numeric, GradientsAccumulateAcrossSharedUses) {
    auto x = T::from({1}, {3}, true);
    add(mul(x, x), scale(x, 2.0)).backward();  // d/dx (x² + 2x) = 2x + 2
    EXPECT_EQ(x.grad()[0], 8.0);
}

TEST(Tensor, ShapeInvariants) {
    EXPECT_THROW(T::from({2, 2}, {1, 2, 3}), DimensionError);
    EXPECT_THROW(T::zeros({0, 2}), DimensionError);
    auto t = T::zeros({2, 3, 4});
    EXPECT_EQ(t.size(), numel(t.shape()));
}

TEST(Tensor, FastModeFloatForward) {
    std::mt19937_64 rng(15);
    auto x = random_tensor({3, 5}, rng, -1, 1, false);
    auto xf = Tensor<float>::from({3, 5}, std::vector<float>(x.data().begin(), x.data().end()));
    auto yd = softmax(x, 1);
    auto yf = softmax(xf, 1);
    for (std::size_t i = 0; i < yd.size(); ++i) EXPECT_NEAR(yf[i], yd[i], 1e-6);
}
