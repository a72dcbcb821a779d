#include <cmath>

#include <gtest/gtest.h>

#include "ncd/errors.hpp"
#include "ncd/tensor.hpp"
#include "support.hpp"

using namespace ncd;
using ncd::testing::check_gradient;
using ncd::testing::random_tensor;
using ncd::testing::weighted_sum;

namespace {

Tensor triple_loop(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(p, j);
            out.at(i, j) = s;
        }
    return out;
}

}  // namespace

TEST(Tensor, RejectsZeroDimensionsAndMismatchedData) {
    EXPECT_THROW(Tensor({2, 0}), DimensionError);
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), DimensionError);
}

TEST(Tensor, RowsAndColsFlattenTrailingDims) {
    Tensor t({3, 1, 2, 2});
    EXPECT_EQ(t.rows(), 3u);
    EXPECT_EQ(t.cols(), 4u);
    t.row(1)[3] = 7.0;
    EXPECT_EQ(t[7], 7.0);
}

TEST(Matmul, IdentityTimesMatrix) {
    const Tensor id = Tensor::matrix({{1, 0}, {0, 1}});
    const Tensor b = Tensor::matrix({{3, 4}, {5, 6}});
    EXPECT_EQ(matmul(id, b), b);
}

TEST(Matmul, RowTimesColumn) {
    const Tensor r = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}}));
    ASSERT_EQ(r.shape(), (Shape{1, 1}));
    EXPECT_EQ(r[0], 11.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = 1 + rng.index(6), k = 1 + rng.index(6), n = 1 + rng.index(6);
        const Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
        const Tensor got = matmul(a, b), want = triple_loop(a, b);
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    }
    const Tensor a = random_tensor({4, 3}, rng), b = random_tensor({3, 5}, rng);
    EXPECT_EQ(matmul(a, b), triple_loop(a, b));
}

TEST(Matmul, MismatchNamesBothShapes) {
    try {
        matmul(Tensor({2, 3}), Tensor({4, 5}));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
    }
}

TEST(Matmul, BackwardMatchesFiniteDifferences) {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
        const Tensor w = random_tensor({3, 2}, rng);
        Tensor ga(a.shape()), gb(b.shape());
        matmul_backward(a, b, w, &ga, &gb);
        auto loss = [&] { return weighted_sum(matmul(a, b), w); };
        EXPECT_LT(check_gradient(a.values(), ga.values(), loss).max_rel_err, 1e-6);
        EXPECT_LT(check_gradient(b.values(), gb.values(), loss).max_rel_err, 1e-6);
    }
}

TEST(Matmul, BackwardAccumulates) {
    const Tensor a = Tensor::matrix({{1, 2}}), b = Tensor::matrix({{3}, {4}}), g = Tensor::matrix({{1}});
    Tensor ga(a.shape(), 10.0);
    matmul_backward(a, b, g, &ga, nullptr);
    EXPECT_EQ(ga, Tensor::matrix({{13, 14}}));
}

TEST(Softmax, UniformForEqualLogits) {
    const Tensor p = softmax(Tensor::vector({0, 0, 0, 0}));
    for (double v : p.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
    const Tensor p = softmax(Tensor::vector({1000, 0}));
    EXPECT_TRUE(p.all_finite());
    EXPECT_NEAR(p[0], 1.0, 1e-300);
    EXPECT_LT(p[1], 1e-300);
}

TEST(Softmax, MatchesDirectFormula) {
    const Tensor p = softmax(Tensor::vector({1, 2, 3}));
    long double denom = 0;
    for (int i = 1; i <= 3; ++i) denom += std::exp(static_cast<long double>(i));
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(p[static_cast<std::size_t>(i)], static_cast<double>(std::exp(static_cast<long double>(i + 1)) / denom), 1e-12);
    }
}

TEST(Softmax, SumsToOneAndIgnoresShift) {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor logits = random_tensor({1, 7}, rng, -20, 20);
        const Tensor p = softmax_rows(logits);
        double sum = 0.0;
        for (double v : p.values()) sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-12);
        for (double& v : logits.values()) v += 123.456;
        const Tensor q = softmax_rows(logits);
        for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
    }
}

TEST(Softmax, RowBackwardMatchesFiniteDifferences) {
    Rng rng(14);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits = random_tensor({3, 5}, rng, -3, 3);
        const Tensor w = random_tensor({3, 5}, rng);
        const Tensor g = softmax_rows_backward(softmax_rows(logits), w);
        EXPECT_LT(check_gradient(logits.values(), g.values(), [&] { return weighted_sum(softmax_rows(logits), w); }).max_rel_err,
                  1e-6);
    }
}

TEST(Relu, Examples) {
    EXPECT_EQ(relu(Tensor::vector({-1, 0, 2})), Tensor::vector({0, 0, 2}));
    EXPECT_EQ(relu(Tensor::vector({-3, -0.5})), Tensor::vector({0, 0}));
}

TEST(Relu, GradientAwayFromKink) {
    Tensor x = Tensor::vector({-1, 2});
    const Tensor w = Tensor::vector({0.7, -1.3});
    const Tensor g = relu_backward(x, w);
    const auto r = check_gradient(x.values(), g.values(), [&] { return weighted_sum(relu(x), w); });
    EXPECT_LT(r.max_rel_err, 1e-6);
}

TEST(Relu, SubgradientAtZeroIsZero) {
    EXPECT_EQ(relu_backward(Tensor::vector({0.0}), Tensor::vector({5.0}))[0], 0.0);
}

TEST(RowBias, BackwardSumsRows) {
    Tensor x = Tensor::matrix({{1, 2}, {3, 4}});
    add_row_bias(x, Tensor::vector({10, 20}));
    EXPECT_EQ(x, Tensor::matrix({{11, 22}, {13, 24}}));
    Tensor gb({2});
    add_row_bias_backward(Tensor::matrix({{1, 2}, {3, 4}}), gb);
    EXPECT_EQ(gb, Tensor::vector({4, 6}));
}

TEST(Sgd, PlainStep) {
    Parameter p(Tensor::vector({1.0}));
    p.grad[0] = 2.0;
    Sgd opt({&p}, 0.0);
    opt.step(0.1);
    EXPECT_DOUBLE_EQ(p.value[0], 0.8);
    EXPECT_EQ(p.grad[0], 0.0);
}

TEST(Sgd, FrozenParameterUntouched) {
    Parameter p(Tensor::vector({1.5, -2.5}));
    p.frozen = true;
    p.grad.fill(3.0);
    Sgd opt({&p}, 0.9);
    opt.step(0.5);
    EXPECT_EQ(p.value, Tensor::vector({1.5, -2.5}));
}

TEST(Sgd, TwoMomentumStepsMatchHandRecurrence) {
    const double x0 = 1.0, g1 = 2.0, g2 = -0.5, lr = 0.1, mu = 0.9;
    Parameter p(Tensor::vector({x0}));
    Sgd opt({&p}, mu);
    p.grad[0] = g1;
    opt.step(lr);
    p.grad[0] = g2;
    opt.step(lr);
    const double v1 = g1, x1 = x0 - lr * v1;
    const double v2 = mu * v1 + g2, x2 = x1 - lr * v2;
    EXPECT_DOUBLE_EQ(p.value[0], x2);
}

TEST(Sgd, RejectsBadHyperparameters) {
    Parameter p(Tensor::vector({1.0}));
    EXPECT_THROW(Sgd({&p}, 1.0), ArgumentError);
    EXPECT_THROW(Sgd({&p}, -0.1), ArgumentError);
    Sgd opt({&p}, 0.5);
    EXPECT_THROW(opt.step(0.0), ArgumentError);
}
