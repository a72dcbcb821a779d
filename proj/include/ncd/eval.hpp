#pragma once

// Clustering accuracy under the best cluster-to-class bijection, the k-means++
// baseline, and old/new/all scoring for the incremental head.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ncd/data.hpp"
#include "ncd/errors.hpp"
#include "ncd/model.hpp"
#include "ncd/rng.hpp"
#include "ncd/tensor.hpp"

namespace ncd {

// Square cost matrix, row-major.
struct CostMatrix {
    std::size_t n = 0;
    std::vector<double> cost;

    double operator()(std::size_t r, std::size_t c) const noexcept { return cost[r * n + c]; }
};

namespace detail {

// Shortest-augmenting-path Hungarian method with potentials, O(n^3).
// Returns assignment[row] = column.
inline std::vector<std::size_t> hungarian_solve(const CostMatrix& a) {
    const std::size_t n = a.n;
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> assignment(n);
    for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
    return assignment;
}

inline double assignment_cost(const CostMatrix& a, std::span<const std::size_t> perm) {
    double s = 0.0;
    for (std::size_t r = 0; r < perm.size(); ++r) s += a(r, perm[r]);
    return s;
}

inline double optimal_cost(const CostMatrix& a) {
    if (a.n == 0) return 0.0;
    return assignment_cost(a, hungarian_solve(a));
}

} // namespace detail

// Minimum-cost perfect assignment; among optimal assignments, the
// lexicographically smallest permutation is returned.
inline std::vector<std::size_t> hungarian(const CostMatrix& a) {
    if (a.cost.size() != a.n * a.n) throw ArgumentError("hungarian: cost matrix is not square");
    for (double c : a.cost) {
        if (!std::isfinite(c)) throw ArgumentError("hungarian: cost matrix has non-finite entries");
    }
    const std::size_t n = a.n;
    if (n == 0) return {};
    const double best = detail::optimal_cost(a);
    double scale = 1.0;
    for (double c : a.cost) scale = std::max(scale, std::abs(c));
    const double tol = 1e-9 * scale * static_cast<double>(n);

    // Fix rows in order, each to the smallest column that still admits an optimal completion.
    std::vector<std::size_t> perm(n);
    std::vector<char> taken(n, 0);
    double fixed = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        bool placed = false;
        for (std::size_t c = 0; c < n && !placed; ++c) {
            if (taken[c]) continue;
            CostMatrix sub;
            sub.n = n - r - 1;
            for (std::size_t rr = r + 1; rr < n; ++rr) {
                for (std::size_t cc = 0; cc < n; ++cc) {
                    if (!taken[cc] && cc != c) sub.cost.push_back(a(rr, cc));
                }
            }
            const double total = fixed + a(r, c) + detail::optimal_cost(sub);
            if (total <= best + tol) {
                perm[r] = c;
                taken[c] = 1;
                fixed += a(r, c);
                placed = true;
            }
        }
        if (!placed) throw NumericError("hungarian: failed to reconstruct an optimal assignment");
    }
    return perm;
}

inline std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& rows) {
    CostMatrix m;
    m.n = rows.size();
    for (const auto& r : rows) {
        if (r.size() != m.n) {
            throw ArgumentError("hungarian: cost matrix is " + std::to_string(m.n) + "x" + std::to_string(r.size()) +
                                ", not square");
        }
        m.cost.insert(m.cost.end(), r.begin(), r.end());
    }
    return hungarian(m);
}

struct AssignmentResult {
    std::vector<std::size_t> permutation;  // cluster index -> class index
    std::size_t matched_count = 0;
    std::size_t total = 0;
    double acc = 0.0;
};

// Counts [cluster][class] over samples; out-of-range entries are rejected.
inline std::vector<std::vector<double>> contingency(std::span<const int> pred, std::span<const int> truth, std::size_t classes) {
    if (pred.size() != truth.size()) throw ArgumentError("clustering_acc: prediction and truth lengths differ");
    std::vector<std::vector<double>> counts(classes, std::vector<double>(classes, 0.0));
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || static_cast<std::size_t>(pred[i]) >= classes || truth[i] < 0 ||
            static_cast<std::size_t>(truth[i]) >= classes) {
            throw ArgumentError("clustering_acc: index out of range at sample " + std::to_string(i));
        }
        counts[static_cast<std::size_t>(pred[i])][static_cast<std::size_t>(truth[i])] += 1.0;
    }
    return counts;
}

inline AssignmentResult match_counts(const std::vector<std::vector<double>>& counts, std::size_t total) {
    std::vector<std::vector<double>> cost = counts;
    for (auto& row : cost) {
        for (double& v : row) v = -v;
    }
    AssignmentResult out;
    out.permutation = hungarian(cost);
    for (std::size_t c = 0; c < counts.size(); ++c) out.matched_count += static_cast<std::size_t>(counts[c][out.permutation[c]]);
    out.total = total;
    out.acc = total == 0 ? 0.0 : static_cast<double>(out.matched_count) / static_cast<double>(total);
    return out;
}

inline AssignmentResult clustering_acc(std::span<const int> pred, std::span<const int> truth, std::size_t classes) {
    return match_counts(contingency(pred, truth, classes), pred.size());
}

// ---------------------------------------------------------------------------
// k-means with k-means++ seeding.
// ---------------------------------------------------------------------------

struct KMeansResult {
    std::vector<int> assignment;
    Tensor centroids;
    std::vector<double> objective;  // within-cluster sum of squares after each assignment step
    std::size_t iterations = 0;
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

} // namespace detail

inline Tensor kmeans_pp_seed(const Tensor& x, std::size_t k, Rng& rng) {
    const std::size_t m = x.rows(), d = x.cols();
    Tensor centroids({k, d});
    auto place = [&](std::size_t c, std::size_t point) {
        std::copy(x.row(point).begin(), x.row(point).end(), centroids.row(c).begin());
    };
    place(0, rng.index(m));
    std::vector<double> dist(m, std::numeric_limits<double>::infinity());
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            dist[i] = std::min(dist[i], detail::sq_dist(x.row(i), centroids.row(c - 1)));
            total += dist[i];
        }
        std::size_t pick = 0;
        if (total <= 0.0) {
            pick = rng.index(m);
        } else {
            double target = rng.uniform(0.0, total);
            pick = m - 1;
            for (std::size_t i = 0; i < m; ++i) {
                target -= dist[i];
                if (target < 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        place(c, pick);
    }
    return centroids;
}

// Lloyd iterations from k-means++ seeding until the largest centroid shift is
// below tol or max_iter is reached. An empty cluster is re-seeded at the point
// farthest from its current centroid.
inline KMeansResult kmeans(const Tensor& x, std::size_t k, Rng& rng, std::size_t max_iter = 300, double tol = 1e-6) {
    if (x.rank() != 2) throw DimensionError("kmeans expects an [M x d] matrix");
    const std::size_t m = x.rows(), d = x.cols();
    if (k < 1 || m < k) throw ArgumentError("kmeans: need at least k points and k >= 1");
    KMeansResult out;
    out.centroids = kmeans_pp_seed(x, k, rng);
    out.assignment.assign(m, 0);
    std::vector<double> point_dist(m);
    for (std::size_t it = 0; it < max_iter; ++it) {
        double objective = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            std::size_t best = 0;
            double bd = detail::sq_dist(x.row(i), out.centroids.row(0));
            for (std::size_t c = 1; c < k; ++c) {
                const double dd = detail::sq_dist(x.row(i), out.centroids.row(c));
                if (dd < bd) {
                    bd = dd;
                    best = c;
                }
            }
            out.assignment[i] = static_cast<int>(best);
            point_dist[i] = bd;
            objective += bd;
        }
        out.objective.push_back(objective);
        out.iterations = it + 1;

        Tensor next({k, d});
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < m; ++i) {
            const auto c = static_cast<std::size_t>(out.assignment[i]);
            ++count[c];
            auto row = next.row(c);
            auto xi = x.row(i);
            for (std::size_t j = 0; j < d; ++j) row[j] += xi[j];
        }
        std::vector<char> reseeded(m, 0);
        for (std::size_t c = 0; c < k; ++c) {
            auto row = next.row(c);
            if (count[c] > 0) {
                for (double& v : row) v /= static_cast<double>(count[c]);
                continue;
            }
            std::size_t far = 0;
            double fd = -1.0;
            for (std::size_t i = 0; i < m; ++i) {
                if (!reseeded[i] && point_dist[i] > fd) {
                    fd = point_dist[i];
                    far = i;
                }
            }
            reseeded[far] = 1;
            std::copy(x.row(far).begin(), x.row(far).end(), row.begin());
        }
        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) shift = std::max(shift, std::sqrt(detail::sq_dist(next.row(c), out.centroids.row(c))));
        out.centroids = std::move(next);
        if (shift < tol) break;
    }
    return out;
}

inline std::vector<int> kmeans_baseline(const Tensor& features, std::size_t clusters, std::uint64_t seed) {
    Rng rng(seed);
    return kmeans(features, clusters, rng).assignment;
}

// ---------------------------------------------------------------------------
// Model predictions.
// ---------------------------------------------------------------------------

// Backbone features of every image, computed in chunks.
inline Tensor extract_features(const Model& model, const Tensor& images, std::size_t chunk = 256) {
    const std::size_t n = images.rows(), d = model.backbone.feature_dim();
    Tensor out({n, d});
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(n, start + chunk); ++i) idx.push_back(i);
        Tensor z = model.backbone.forward(gather_rows(images, idx));
        std::copy(z.values().begin(), z.values().end(), out.row(start).begin());
    }
    return out;
}

// Argmax of a head over every image; no augmentation.
inline std::vector<int> predict_head(const Model& model, const Head& head, const Tensor& images) {
    const Tensor p = head.forward(extract_features(model, images));
    std::vector<int> out(p.rows());
    for (std::size_t i = 0; i < p.rows(); ++i) out[i] = static_cast<int>(argmax(p.row(i)));
    return out;
}

inline std::vector<int> predict_clusters(const Model& model, const Tensor& images) {
    if (!model.unlabelled) throw StateError("model has no unlabelled head");
    return predict_head(model, *model.unlabelled, images);
}

// Clustering ACC of the unlabelled head on a dataset with ground truth.
inline double unlabelled_acc(const Model& model, const Dataset& ds) {
    if (ds.size() == 0) return 0.0;
    return clustering_acc(predict_clusters(model, ds.images), ds.labels, ds.num_classes).acc;
}

// Plain classification accuracy of the labelled head.
inline double labelled_acc(const Model& model, const Dataset& ds) {
    if (!model.labelled) throw StateError("model has no labelled head");
    if (ds.size() == 0) return 0.0;
    const auto pred = predict_head(model, *model.labelled, ds.images);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == ds.labels[i] ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(pred.size());
}

struct IncrementalReport {
    double old_acc = 0.0;
    double new_acc = 0.0;
    double all_acc = 0.0;
};

// Scores predictions of an extended head with C_l + C_u outputs. Old-class
// samples must hit their exact slot. New-class samples landing in an old slot
// count as errors; the rest are Hungarian-matched over the new slots.
inline IncrementalReport incremental_scores(std::span<const int> pred_l, std::span<const int> truth_l,
                                            std::span<const int> pred_u, std::span<const int> truth_u,
                                            std::size_t c_l, std::size_t c_u) {
    if (pred_l.size() != truth_l.size() || pred_u.size() != truth_u.size()) {
        throw ArgumentError("incremental_scores: prediction and truth lengths differ");
    }
    std::size_t old_ok = 0;
    for (std::size_t i = 0; i < pred_l.size(); ++i) old_ok += pred_l[i] == truth_l[i] ? 1 : 0;
    std::vector<std::vector<double>> counts(c_u, std::vector<double>(c_u, 0.0));
    for (std::size_t i = 0; i < pred_u.size(); ++i) {
        if (truth_u[i] < 0 || static_cast<std::size_t>(truth_u[i]) >= c_u) throw ArgumentError("incremental_scores: truth out of range");
        const int slot = pred_u[i] - static_cast<int>(c_l);
        if (slot >= 0 && static_cast<std::size_t>(slot) < c_u) {
            counts[static_cast<std::size_t>(slot)][static_cast<std::size_t>(truth_u[i])] += 1.0;
        }
    }
    const AssignmentResult matched = match_counts(counts, pred_u.size());
    IncrementalReport r;
    r.old_acc = pred_l.empty() ? 0.0 : static_cast<double>(old_ok) / static_cast<double>(pred_l.size());
    r.new_acc = matched.acc;
    const std::size_t n = pred_l.size() + pred_u.size();
    r.all_acc = n == 0 ? 0.0 : static_cast<double>(old_ok + matched.matched_count) / static_cast<double>(n);
    return r;
}

inline IncrementalReport incremental_report(const Model& model, const Dataset& test_l, const Dataset& test_u) {
    if (!model.labelled || model.labelled->kind() != HeadKind::incremental) {
        throw StateError("incremental_report needs a model with an incremental head");
    }
    const std::size_t c_l = test_l.num_classes, c_u = test_u.num_classes;
    if (model.labelled->outputs() != c_l + c_u) throw StateError("incremental head width does not match C_l + C_u");
    const auto pred_l = predict_head(model, *model.labelled, test_l.images);
    const auto pred_u = predict_head(model, *model.labelled, test_u.images);
    return incremental_scores(pred_l, test_l.labels, pred_u, test_u.labels, c_l, c_u);
}

} // namespace ncd
