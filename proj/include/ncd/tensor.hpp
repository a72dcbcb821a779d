#pragma once

// Dense row-major float64 tensors and the handful of differentiable
// primitives the network needs. Every primitive has an explicit backward;
// there is no autodiff graph.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ncd/errors.hpp"

namespace ncd {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

inline std::size_t shape_volume(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {
        check_shape();
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (shape_volume(shape_) != data_.size()) {
            throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                                 std::to_string(data_.size()) + " values");
        }
    }

    // Builds a 2-D tensor from nested rows, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("ragged matrix literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    static Tensor vector(std::initializer_list<double> values) {
        return Tensor({values.size()}, std::vector<double>(values));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // Leading dimension, and the flattened width of everything after it.
    std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const noexcept { return rows() == 0 ? 0 : data_.size() / rows(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols(), cols()};
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    void check_shape() const {
        for (std::size_t d : shape_) {
            if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
        }
    }

    Shape shape_;
    std::vector<double> data_;
};

// Trainable tensor with its accumulated gradient.
struct Parameter {
    Tensor value;
    Tensor grad;
    bool frozen = false;

    Parameter() = default;
    explicit Parameter(Tensor v) : value(std::move(v)), grad(value.shape(), 0.0) {}

    void zero_grad() { grad.fill(0.0); }
};

namespace detail {

inline void require_matrix(const Tensor& t, const char* name) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(name) + " must be a matrix, got shape " + shape_string(t.shape()));
    }
}

} // namespace detail

// a[m x k] * b[k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul lhs");
    detail::require_matrix(b, "matmul rhs");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()));
    }
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* o = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a.data()[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += aip * brow[j];
        }
    }
    return out;
}

// Given out = a * b and dL/dout, accumulates dL/da and dL/db. Either target may be null.
inline void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out, Tensor* grad_a,
                            Tensor* grad_b) {
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (grad_out.shape() != Shape{m, n}) {
        throw DimensionError("matmul_backward: gradient shape " + shape_string(grad_out.shape()) +
                             " does not match product shape " + shape_string({m, n}));
    }
    if (grad_a != nullptr) {
        if (!grad_a->same_shape(a)) throw DimensionError("matmul_backward: grad_a shape mismatch");
        // dA = dOut * B^T
        for (std::size_t i = 0; i < m; ++i) {
            const double* g = grad_out.data() + i * n;
            double* ga = grad_a->data() + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const double* brow = b.data() + p * n;
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += g[j] * brow[j];
                ga[p] += acc;
            }
        }
    }
    if (grad_b != nullptr) {
        if (!grad_b->same_shape(b)) throw DimensionError("matmul_backward: grad_b shape mismatch");
        // dB = A^T * dOut
        for (std::size_t i = 0; i < m; ++i) {
            const double* g = grad_out.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = a.data()[i * k + p];
                if (aip == 0.0) continue;
                double* gb = grad_b->data() + p * n;
                for (std::size_t j = 0; j < n; ++j) gb[j] += aip * g[j];
            }
        }
    }
}

// x[B x n] + bias[n] broadcast over rows, in place.
inline void add_row_bias(Tensor& x, const Tensor& bias) {
    if (bias.size() != x.cols()) {
        throw DimensionError("bias " + shape_string(bias.shape()) + " does not fit rows of " +
                             shape_string(x.shape()));
    }
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
    }
}

// Column sums of grad_out accumulated into grad_bias.
inline void add_row_bias_backward(const Tensor& grad_out, Tensor& grad_bias) {
    for (std::size_t r = 0; r < grad_out.rows(); ++r) {
        auto row = grad_out.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) grad_bias[j] += row[j];
    }
}

// Numerically stable softmax of a single vector.
inline void softmax_inplace(std::span<double> v) {
    if (v.empty()) throw ArgumentError("softmax of an empty vector");
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

inline Tensor softmax(const Tensor& logits) {
    Tensor out = logits;
    softmax_inplace(out.values());
    return out;
}

// Row-wise softmax of a [B x C] matrix.
inline Tensor softmax_rows(const Tensor& logits) {
    Tensor out = logits;
    for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
    return out;
}

// dL/dlogits from dL/dprobs for row-wise softmax: p * (g - <g, p>).
inline Tensor softmax_rows_backward(const Tensor& probs, const Tensor& grad_probs) {
    if (!probs.same_shape(grad_probs)) throw DimensionError("softmax_rows_backward: shape mismatch");
    Tensor out(probs.shape());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        auto p = probs.row(r);
        auto g = grad_probs.row(r);
        double dot = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) dot += g[j] * p[j];
        auto o = out.row(r);
        for (std::size_t j = 0; j < p.size(); ++j) o[j] = p[j] * (g[j] - dot);
    }
    return out;
}

inline Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return out;
}

inline void relu_inplace(Tensor& x) {
    for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
}

// Passes gradient where the pre-activation is strictly positive; subgradient 0 at 0.
inline Tensor relu_backward(const Tensor& pre_activation, const Tensor& grad_out) {
    if (!pre_activation.same_shape(grad_out)) throw DimensionError("relu_backward: shape mismatch");
    Tensor out(grad_out.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pre_activation[i] > 0.0 ? grad_out[i] : 0.0;
    return out;
}

// SGD with heavy-ball momentum: v <- momentum * v + g; value <- value - lr * v.
// Frozen parameters are never touched. Gradients are zeroed after every step.
class Sgd {
public:
    Sgd(std::vector<Parameter*> params, double momentum) : params_(std::move(params)), momentum_(momentum) {
        if (momentum < 0.0 || momentum >= 1.0) throw ArgumentError("momentum must lie in [0, 1)");
        velocity_.reserve(params_.size());
        for (const Parameter* p : params_) velocity_.emplace_back(p->value.shape(), 0.0);
    }

    void step(double lr) {
        if (!(lr > 0.0)) throw ArgumentError("learning rate must be positive");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Parameter& p = *params_[i];
            if (!p.frozen) {
                Tensor& v = velocity_[i];
                for (std::size_t j = 0; j < v.size(); ++j) {
                    v[j] = momentum_ * v[j] + p.grad[j];
                    p.value[j] -= lr * v[j];
                }
            }
            p.zero_grad();
        }
    }

    void zero_grad() {
        for (Parameter* p : params_) p->zero_grad();
    }

    double momentum() const noexcept { return momentum_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> velocity_;
    double momentum_;
};

} // namespace ncd
