#pragma once

// Loss terms of the joint objective, each with its gradient with respect to
// the probability rows it consumes. Callers chain those through
// softmax_rows_backward into the heads.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ncd/errors.hpp"
#include "ncd/rankstats.hpp"
#include "ncd/tensor.hpp"

namespace ncd {

inline constexpr double kLogClamp = 1e-12;

// Mean negative log-likelihood of the labelled class, probabilities clamped
// to [eps, 1]. If grad is given, dL/dprobs is accumulated into it.
inline double cross_entropy(const Tensor& probs, std::span<const int> labels, Tensor* grad = nullptr,
                            double scale = 1.0) {
    if (probs.rank() != 2) throw DimensionError("cross_entropy expects [B x C] probabilities");
    const std::size_t b = probs.rows(), c = probs.cols();
    if (labels.size() != b) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(b) + " rows");
    }
    if (grad != nullptr && !grad->same_shape(probs)) throw DimensionError("cross_entropy: gradient shape mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw ArgumentError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
        }
        const double p = probs.at(i, static_cast<std::size_t>(y));
        const double clamped = std::min(std::max(p, kLogClamp), 1.0);
        total -= std::log(clamped);
        if (grad != nullptr && p > kLogClamp && p < 1.0) {
            grad->at(i, static_cast<std::size_t>(y)) -= scale / (static_cast<double>(b) * p);
        }
    }
    return total / static_cast<double>(b);
}

// Pairwise binary cross-entropy on inner products of probability rows
//   -(1/B^2) sum_ij [ s_ij log(p_i.p_j) + (1 - s_ij) log(1 - p_i.p_j) ]
// with inner products clamped to [eps, 1 - eps]. The diagonal is included
// unless include_diagonal is false, in which case the normaliser is B(B-1).
inline double pairwise_bce(const Tensor& probs, const PairLabelMatrix& s, Tensor* grad = nullptr,
                           bool include_diagonal = true, double scale = 1.0) {
    if (probs.rank() != 2) throw DimensionError("pairwise_bce expects [B x C] probabilities");
    const std::size_t b = probs.rows(), c = probs.cols();
    if (s.size() != b) {
        throw ArgumentError("pairwise_bce: pair matrix is " + std::to_string(s.size()) + "x" + std::to_string(s.size()) +
                            " but the batch has " + std::to_string(b) + " rows");
    }
    if (grad != nullptr && !grad->same_shape(probs)) throw DimensionError("pairwise_bce: gradient shape mismatch");
    const double pairs = include_diagonal ? static_cast<double>(b * b) : static_cast<double>(b * (b - 1));
    if (pairs == 0.0) return 0.0;
    const double lo = kLogClamp, hi = 1.0 - kLogClamp;
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        auto pi = probs.row(i);
        for (std::size_t j = 0; j < b; ++j) {
            if (!include_diagonal && i == j) continue;
            auto pj = probs.row(j);
            double q = 0.0;
            for (std::size_t t = 0; t < c; ++t) q += pi[t] * pj[t];
            const double qc = std::min(std::max(q, lo), hi);
            const bool same = s(i, j) != 0;
            total -= same ? std::log(qc) : std::log(1.0 - qc);
            if (grad != nullptr && q > lo && q < hi) {
                // d/dq of the pair term, then dq/dp_i = p_j and dq/dp_j = p_i.
                const double g = scale * (same ? -1.0 / q : 1.0 / (1.0 - q)) / pairs;
                auto gi = grad->row(i);
                auto gj = grad->row(j);
                for (std::size_t t = 0; t < c; ++t) {
                    gi[t] += g * pj[t];
                    gj[t] += g * pi[t];
                }
            }
        }
    }
    return total / pairs;
}

// (1/B) sum_i ||p_i - q_i||^2. Gradients accumulated into either side if given.
inline double consistency_mse(const Tensor& probs_clean, const Tensor& probs_aug, Tensor* grad_clean = nullptr,
                              Tensor* grad_aug = nullptr, double scale = 1.0) {
    if (!probs_clean.same_shape(probs_aug)) {
        throw ArgumentError("consistency_mse: shapes " + shape_string(probs_clean.shape()) + " and " +
                            shape_string(probs_aug.shape()) + " differ");
    }
    const std::size_t b = probs_clean.rows();
    double total = 0.0;
    for (std::size_t i = 0; i < probs_clean.size(); ++i) {
        const double diff = probs_clean[i] - probs_aug[i];
        total += diff * diff;
        if (grad_clean != nullptr) (*grad_clean)[i] += scale * 2.0 * diff / static_cast<double>(b);
        if (grad_aug != nullptr) (*grad_aug)[i] -= scale * 2.0 * diff / static_cast<double>(b);
    }
    return total / static_cast<double>(b);
}

struct RampUpSchedule {
    double lambda = 5.0;
    double length = 10.0;  // T, in epochs
};

// lambda * exp(-5 (1 - t/T)^2) for t < T, lambda afterwards.
inline double ramp_up(const RampUpSchedule& sched, double t) {
    if (t >= sched.length) return sched.lambda;
    const double phase = 1.0 - t / sched.length;
    return sched.lambda * std::exp(-5.0 * phase * phase);
}

struct LossReport {
    double ce = 0.0;
    double bce = 0.0;
    double mse = 0.0;
    double omega = 0.0;
    double total = 0.0;
};

inline LossReport total_loss(double ce, double bce, double mse, double omega) {
    const char* names[] = {"ce", "bce", "mse", "omega"};
    const double values[] = {ce, bce, mse, omega};
    for (int i = 0; i < 4; ++i) {
        if (!std::isfinite(values[i])) throw NumericError(std::string("loss component ") + names[i] + " is not finite");
    }
    return LossReport{ce, bce, mse, omega, ce + bce + omega * mse};
}

} // namespace ncd
