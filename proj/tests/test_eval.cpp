#include <algorithm>
#include <numeric>

#include <gtest/gtest.h>

#include "ncd/errors.hpp"
#include "ncd/eval.hpp"
#include "support.hpp"

using namespace ncd;

namespace {

struct BruteForce {
    double cost;
    std::vector<std::size_t> perm;  // lexicographically first optimum
};

BruteForce brute_force(const CostMatrix& a) {
    std::vector<std::size_t> p(a.n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    BruteForce best{INFINITY, p};
    do {
        double c = 0.0;
        for (std::size_t r = 0; r < a.n; ++r) c += a(r, p[r]);
        if (c < best.cost) best = {c, p};
    } while (std::next_permutation(p.begin(), p.end()));
    return best;
}

CostMatrix random_costs(std::size_t n, Rng& rng, bool integral) {
    CostMatrix m;
    m.n = n;
    for (std::size_t i = 0; i < n * n; ++i) m.cost.push_back(integral ? static_cast<double>(rng.integer(0, 3)) : rng.uniform(-5, 5));
    return m;
}

double acc(const std::vector<int>& pred, const std::vector<int>& truth, std::size_t l) {
    return clustering_acc(pred, truth, l).acc;
}

}  // namespace

TEST(Hungarian, DiagonalDominantIsIdentity) {
    EXPECT_EQ(hungarian({{0, 1, 1}, {1, 0, 1}, {1, 1, 0}}), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Hungarian, SingleEntry) { EXPECT_EQ(hungarian(std::vector<std::vector<double>>{{7.5}}), (std::vector<std::size_t>{0})); }

TEST(Hungarian, RejectsNonSquareAndNonFinite) {
    EXPECT_THROW(hungarian({{1, 2}, {3}}), ArgumentError);
    EXPECT_THROW(hungarian({{1, 2, 3}, {4, 5, 6}}), ArgumentError);
    EXPECT_THROW(hungarian({{1, INFINITY}, {0, 1}}), ArgumentError);
}

TEST(Hungarian, MatchesFactorialBruteForce) {
    Rng rng(71);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.index(7);
        const CostMatrix m = random_costs(n, rng, false);
        const auto perm = hungarian(m);
        double got = 0.0;
        for (std::size_t r = 0; r < n; ++r) got += m(r, perm[r]);
        EXPECT_EQ(got, brute_force(m).cost) << "trial " << trial;
    }
}

TEST(Hungarian, TiesResolveToLexicographicallySmallest) {
    Rng rng(72);
    for (int trial = 0; trial < 200; ++trial) {
        const CostMatrix m = random_costs(1 + rng.index(6), rng, true);
        EXPECT_EQ(hungarian(m), brute_force(m).perm) << "trial " << trial;
    }
    EXPECT_EQ(hungarian({{1, 1}, {1, 1}}), (std::vector<std::size_t>{0, 1}));
}

TEST(ClusteringAcc, HandExamples) {
    EXPECT_EQ(acc({0, 0, 1, 1}, {1, 1, 0, 0}, 2), 1.0);
    EXPECT_EQ(acc({0, 1, 0, 1}, {1, 1, 0, 0}, 2), 0.5);
    EXPECT_EQ(acc({2, 0, 1}, {2, 0, 1}, 3), 1.0);
    const AssignmentResult r = clustering_acc(std::vector<int>{0, 0, 1, 1}, std::vector<int>{1, 1, 0, 0}, 2);
    EXPECT_EQ(r.permutation, (std::vector<std::size_t>{1, 0}));
    EXPECT_EQ(r.matched_count, 4u);
}

TEST(ClusteringAcc, InvariantUnderRelabelingAndSymmetric) {
    Rng rng(73);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t l = 2 + rng.index(5), n = 5 + rng.index(40);
        std::vector<int> pred(n), truth(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = static_cast<int>(rng.index(l));
            truth[i] = static_cast<int>(rng.index(l));
        }
        std::vector<int> sigma(l), tau(l);
        std::iota(sigma.begin(), sigma.end(), 0);
        std::iota(tau.begin(), tau.end(), 0);
        for (std::size_t i = l; i > 1; --i) {
            std::swap(sigma[i - 1], sigma[rng.index(i)]);
            std::swap(tau[i - 1], tau[rng.index(i)]);
        }
        std::vector<int> pred2(n), truth2(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred2[i] = sigma[static_cast<std::size_t>(pred[i])];
            truth2[i] = tau[static_cast<std::size_t>(truth[i])];
        }
        const double base = acc(pred, truth, l);
        EXPECT_EQ(acc(pred2, truth, l), base);
        EXPECT_EQ(acc(pred, truth2, l), base);
        EXPECT_EQ(acc(truth, pred, l), base);
        EXPECT_EQ(acc(truth, truth, l), 1.0);
    }
}

TEST(ClusteringAcc, RejectsOutOfRange) {
    EXPECT_THROW(acc({0, 2}, {0, 1}, 2), ArgumentError);
    EXPECT_THROW(acc({0, 1}, {0, -1}, 2), ArgumentError);
    EXPECT_THROW(acc({0}, {0, 1}, 2), ArgumentError);
}

TEST(KMeans, RecoversSeparatedBlobs) {
    Rng rng(74);
    const std::size_t per = 40;
    Tensor x({2 * per, 3});
    std::vector<int> truth;
    for (std::size_t i = 0; i < 2 * per; ++i) {
        const double centre = i < per ? -10.0 : 10.0;
        for (double& v : x.row(i)) v = centre + rng.normal(0.0, 0.5);
        truth.push_back(i < per ? 0 : 1);
    }
    const auto pred = kmeans_baseline(x, 2, 5);
    EXPECT_EQ(clustering_acc(pred, truth, 2).acc, 1.0);
}

TEST(KMeans, ObjectiveNeverIncreases) {
    Rng data(75);
    const Tensor x = ncd::testing::random_tensor({200, 4}, data);
    Rng rng(76);
    const KMeansResult r = kmeans(x, 6, rng);
    ASSERT_GE(r.objective.size(), 2u);
    for (std::size_t i = 1; i < r.objective.size(); ++i) EXPECT_LE(r.objective[i], r.objective[i - 1] + 1e-9);
}

TEST(KMeans, IdenticalPointsOccupyOneCluster) {
    const Tensor x({10, 2}, 3.0);
    Rng rng(77);
    const KMeansResult r = kmeans(x, 3, rng);
    EXPECT_EQ(std::count(r.assignment.begin(), r.assignment.end(), r.assignment[0]), 10);
    EXPECT_EQ(r.objective.back(), 0.0);
}

TEST(KMeans, NeedsAtLeastKPoints) {
    Rng rng(78);
    EXPECT_THROW(kmeans(Tensor({2, 2}), 3, rng), ArgumentError);
}

TEST(IncrementalScores, PerfectModel) {
    const std::vector<int> pl{0, 1, 1}, tl{0, 1, 1}, pu{2, 3, 3}, tu{0, 1, 1};
    const auto r = incremental_scores(pl, tl, pu, tu, 2, 2);
    EXPECT_EQ(r.old_acc, 1.0);
    EXPECT_EQ(r.new_acc, 1.0);
    EXPECT_EQ(r.all_acc, 1.0);
}

TEST(IncrementalScores, OnlyOldPredictionsScoreZeroNew) {
    const std::vector<int> pl{0, 1}, tl{0, 1}, pu{0, 1, 0}, tu{0, 1, 1};
    const auto r = incremental_scores(pl, tl, pu, tu, 2, 2);
    EXPECT_EQ(r.new_acc, 0.0);
    EXPECT_EQ(r.all_acc, 2.0 / 5.0);
}

TEST(IncrementalScores, HandCaseWithCrossSliceError) {
    // Old: one right, one wrongly sent to a new slot. New: swapped slots both
    // correct after matching, one lands in an old slot.
    const std::vector<int> pl{0, 3}, tl{0, 1}, pu{3, 2, 1}, tu{0, 1, 1};
    const auto r = incremental_scores(pl, tl, pu, tu, 2, 2);
    EXPECT_EQ(r.old_acc, 0.5);
    EXPECT_DOUBLE_EQ(r.new_acc, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.all_acc, 3.0 / 5.0);
}
