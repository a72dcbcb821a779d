#pragma once

// Pairwise pseudo-labels from rank statistics: two feature vectors are
// declared "same class" when their k largest coordinates occupy the same
// index set.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ncd/errors.hpp"
#include "ncd/tensor.hpp"

namespace ncd {

struct RankStatConfig {
    std::size_t k = 5;
};

// Indices of the k largest values, returned sorted ascending. Values are
// compared as signed numbers; ties at the cut go to the lower index.
inline std::vector<std::size_t> top_k_set(std::span<const double> z, std::size_t k) {
    if (k < 1 || k > z.size()) {
        throw ArgumentError("top_k_set: k=" + std::to_string(k) + " outside [1, " + std::to_string(z.size()) + "]");
    }
    std::vector<std::size_t> idx(z.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto before = [&](std::size_t a, std::size_t b) { return z[a] > z[b] || (z[a] == z[b] && a < b); };
    if (k < z.size()) std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k - 1), idx.end(), before);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// Symmetric, reflexive B x B {0,1} matrix.
class PairLabelMatrix {
public:
    PairLabelMatrix() = default;
    explicit PairLabelMatrix(std::size_t n) : n_(n), labels_(n * n, 0) {
        for (std::size_t i = 0; i < n; ++i) labels_[i * n + i] = 1;
    }

    std::size_t size() const noexcept { return n_; }
    std::uint8_t operator()(std::size_t i, std::size_t j) const noexcept { return labels_[i * n_ + j]; }

    void set(std::size_t i, std::size_t j, bool same) {
        labels_[i * n_ + j] = same ? 1 : 0;
        labels_[j * n_ + i] = same ? 1 : 0;
    }

    std::size_t count_positive() const noexcept {
        return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), std::uint8_t{1}));
    }

    friend bool operator==(const PairLabelMatrix&, const PairLabelMatrix&) = default;

private:
    std::size_t n_ = 0;
    std::vector<std::uint8_t> labels_;
};

inline PairLabelMatrix pair_labels(const Tensor& features, const RankStatConfig& cfg) {
    if (features.rank() != 2) throw DimensionError("pair_labels expects a [B x d] matrix, got " + shape_string(features.shape()));
    const std::size_t b = features.rows();
    std::vector<std::vector<std::size_t>> sets;
    sets.reserve(b);
    for (std::size_t i = 0; i < b; ++i) sets.push_back(top_k_set(features.row(i), cfg.k));
    PairLabelMatrix s(b);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = i + 1; j < b; ++j) s.set(i, j, sets[i] == sets[j]);
    }
    return s;
}

} // namespace ncd
