#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "ncd/errors.hpp"
#include "ncd/rankstats.hpp"
#include "support.hpp"

using namespace ncd;
using ncd::testing::random_tensor;

namespace {

// Full stable sort on (value descending, index ascending), first k indices.
std::vector<std::size_t> sorted_top_k(std::span<const double> z, std::size_t k) {
    std::vector<std::size_t> idx(z.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

PairLabelMatrix brute_force_pairs(const Tensor& f, std::size_t k) {
    const std::size_t b = f.rows();
    PairLabelMatrix s(b);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j)
            if (i != j) s.set(i, j, sorted_top_k(f.row(i), k) == sorted_top_k(f.row(j), k));
    return s;
}

Tensor map_values(Tensor t, double (*fn)(double)) {
    for (double& v : t.values()) v = fn(v);
    return t;
}

}  // namespace

TEST(TopK, HandExample) {
    const std::vector<double> z{5, 1, 9, 3};
    EXPECT_EQ(top_k_set(z, 2), (std::vector<std::size_t>{0, 2}));
}

TEST(TopK, TiesGoToLowestIndices) {
    const std::vector<double> z{4, 4, 4, 4};
    EXPECT_EQ(top_k_set(z, 2), (std::vector<std::size_t>{0, 1}));
    const std::vector<double> w{1, 7, 3, 7, 7};
    EXPECT_EQ(top_k_set(w, 2), (std::vector<std::size_t>{1, 3}));
}

TEST(TopK, SignedValuesNotMagnitudes) {
    const std::vector<double> z{-10, 1, 2, -0.5};
    EXPECT_EQ(top_k_set(z, 2), (std::vector<std::size_t>{1, 2}));
}

TEST(TopK, RejectsOutOfRangeK) {
    const std::vector<double> z{1, 2, 3};
    EXPECT_THROW(top_k_set(z, 0), ArgumentError);
    EXPECT_THROW(top_k_set(z, 4), ArgumentError);
}

TEST(PairLabels, IdenticalRowsArePositive) {
    const Tensor f = Tensor::matrix({{0.3, 0.1, 0.9}, {0.3, 0.1, 0.9}, {0.9, 0.1, 0.3}});
    const PairLabelMatrix s = pair_labels(f, {1});
    EXPECT_EQ(s(0, 1), 1);
    EXPECT_EQ(s(0, 2), 0);
}

TEST(PairLabels, HandExampleDependsOnK) {
    const Tensor f = Tensor::matrix({{9, 5, 1, 0}, {8, 6, 0, 1}});
    EXPECT_EQ(pair_labels(f, {2})(0, 1), 1);
    EXPECT_EQ(pair_labels(f, {3})(0, 1), 0);
}

TEST(PairLabels, MatchesFullSortOracleAndInvariances) {
    Rng rng(41);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t b = 1 + rng.index(32), d = 2 + rng.index(63);
        const std::size_t ks[] = {1, std::min<std::size_t>(5, d), d};
        // Coarse values force plenty of ties so the tie rule is exercised.
        Tensor f = random_tensor({b, d}, rng, -3, 3);
        if (trial % 3 == 0) {
            for (double& v : f.values()) v = std::round(v);
        }
        for (std::size_t k : ks) {
            const PairLabelMatrix s = pair_labels(f, {k});
            ASSERT_EQ(s, brute_force_pairs(f, k)) << "trial " << trial << " k " << k;
            for (std::size_t i = 0; i < b; ++i) {
                EXPECT_EQ(s(i, i), 1);
                for (std::size_t j = 0; j < b; ++j) EXPECT_EQ(s(i, j), s(j, i));
            }
            Tensor scaled = f;
            for (double& v : scaled.values()) v *= 3.7;
            EXPECT_EQ(pair_labels(scaled, {k}), s);
            EXPECT_EQ(pair_labels(map_values(f, [](double v) { return std::tanh(v / 4.0); }), {k}), s);
            EXPECT_EQ(pair_labels(map_values(f, [](double v) { return v * v * v + v; }), {k}), s);
        }
    }
}

TEST(PairLabels, KEqualsDimIsAllOnes) {
    Rng rng(42);
    const Tensor f = random_tensor({12, 6}, rng);
    const PairLabelMatrix s = pair_labels(f, {6});
    EXPECT_EQ(s.count_positive(), 144u);
}

TEST(PairLabels, RejectsNonMatrix) {
    EXPECT_THROW(pair_labels(Tensor::vector({1, 2}), {1}), DimensionError);
}
