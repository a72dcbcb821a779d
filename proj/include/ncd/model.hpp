#pragma once

// The representation as a ReLU perceptron grouped into freezable macro-blocks,
// plus the softmax heads that sit on top of it.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ncd/errors.hpp"
#include "ncd/rng.hpp"
#include "ncd/tensor.hpp"

namespace ncd {

struct BackboneConfig {
    std::size_t channels = 1;
    std::size_t height = 16;
    std::size_t width = 16;
    // Width of every linear layer, bottom to top. The last one is the feature dim.
    std::vector<std::size_t> layer_widths{128, 128, 64, 16};
    // Number of consecutive layers in each macro-block; must sum to layer_widths.size().
    std::vector<std::size_t> block_sizes{1, 1, 1, 1};

    std::size_t input_size() const noexcept { return channels * height * width; }
    std::size_t feature_dim() const noexcept { return layer_widths.empty() ? 0 : layer_widths.back(); }
    std::size_t num_blocks() const noexcept { return block_sizes.size(); }

    // Block index owning each layer.
    std::vector<std::size_t> layer_blocks() const {
        std::vector<std::size_t> out;
        for (std::size_t b = 0; b < block_sizes.size(); ++b) out.insert(out.end(), block_sizes[b], b);
        return out;
    }

    // Problems with this config; empty when valid.
    std::vector<std::string> problems() const {
        std::vector<std::string> out;
        if (channels == 0 || height == 0 || width == 0) out.emplace_back("backbone: input dims must be positive");
        if (layer_widths.empty()) out.emplace_back("backbone: at least one layer is required");
        for (std::size_t w : layer_widths) {
            if (w == 0) {
                out.emplace_back("backbone: layer widths must be positive");
                break;
            }
        }
        if (!layer_widths.empty() && feature_dim() < 2) out.emplace_back("backbone: feature dim must be at least 2");
        std::size_t total = 0;
        for (std::size_t s : block_sizes) {
            if (s == 0) out.emplace_back("backbone: macro-blocks must be nonempty");
            total += s;
        }
        if (total != layer_widths.size()) {
            out.emplace_back("backbone: macro-blocks cover " + std::to_string(total) + " layers but there are " +
                             std::to_string(layer_widths.size()));
        }
        return out;
    }

    void validate() const {
        auto p = problems();
        if (!p.empty()) throw ArgumentError(p.front());
    }

    friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct Linear {
    Parameter weight;  // [in x out]
    Parameter bias;    // [out]

    Linear() = default;

    // Uniform in +-sqrt(6 / (fan_in + fan_out)); zero bias.
    Linear(std::size_t in, std::size_t out, Rng& rng)
        : weight(Tensor({in, out})), bias(Tensor({out})) {
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        for (double& w : weight.value.values()) w = rng.uniform(-bound, bound);
    }

    std::size_t in() const noexcept { return weight.value.shape()[0]; }
    std::size_t out() const noexcept { return weight.value.shape()[1]; }

    Tensor forward(const Tensor& x) const {
        Tensor y = matmul(x, weight.value);
        add_row_bias(y, bias.value);
        return y;
    }

    // Accumulates parameter gradients (unless frozen) and returns dL/dx if requested.
    Tensor backward(const Tensor& x, const Tensor& grad_y, bool want_input_grad) {
        if (!weight.frozen) {
            matmul_backward(x, weight.value, grad_y, nullptr, &weight.grad);
        }
        if (!bias.frozen) add_row_bias_backward(grad_y, bias.grad);
        if (!want_input_grad) return {};
        Tensor grad_x(x.shape());
        matmul_backward(x, weight.value, grad_y, &grad_x, nullptr);
        return grad_x;
    }
};

class Backbone {
public:
    // Activations kept for the backward pass.
    struct Cache {
        std::vector<Tensor> inputs;  // input to each layer
        std::vector<Tensor> pre;     // pre-activation of each layer
    };

    Backbone() = default;

    Backbone(BackboneConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::size_t in = cfg_.input_size();
        for (std::size_t w : cfg_.layer_widths) {
            layers_.emplace_back(in, w, rng);
            in = w;
        }
    }

    const BackboneConfig& config() const noexcept { return cfg_; }
    std::size_t feature_dim() const noexcept { return cfg_.feature_dim(); }
    std::vector<Linear>& layers() noexcept { return layers_; }
    const std::vector<Linear>& layers() const noexcept { return layers_; }

    // ReLU sits between layers; the last layer stays linear, so features are signed.
    Tensor forward(const Tensor& batch, Cache* cache = nullptr) const {
        if (batch.rank() < 2 || batch.cols() != cfg_.input_size()) {
            throw DimensionError("backbone expects rows of " + std::to_string(cfg_.input_size()) +
                                 " values, got batch " + shape_string(batch.shape()));
        }
        Tensor x({batch.rows(), batch.cols()}, std::vector<double>(batch.values().begin(), batch.values().end()));
        if (cache != nullptr) {
            cache->inputs.clear();
            cache->pre.clear();
        }
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            Tensor pre = layers_[i].forward(x);
            Tensor post = i + 1 < layers_.size() ? relu(pre) : pre;
            if (cache != nullptr) {
                cache->inputs.push_back(std::move(x));
                cache->pre.push_back(std::move(pre));
            }
            x = std::move(post);
        }
        return x;
    }

    // Backpropagates dL/dfeatures. Stops descending once every layer below is frozen.
    void backward(const Cache& cache, const Tensor& grad_features) {
        Tensor g = grad_features;
        const std::size_t lowest = lowest_trainable_layer();
        for (std::size_t i = layers_.size(); i-- > lowest;) {
            Tensor g_pre = i + 1 < layers_.size() ? relu_backward(cache.pre[i], g) : std::move(g);
            g = layers_[i].backward(cache.inputs[i], g_pre, i > lowest);
        }
    }

    void set_block_frozen(std::size_t block, bool frozen) {
        if (block >= cfg_.num_blocks()) throw ArgumentError("no macro-block " + std::to_string(block));
        const auto owner = cfg_.layer_blocks();
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (owner[i] == block) {
                layers_[i].weight.frozen = frozen;
                layers_[i].bias.frozen = frozen;
            }
        }
    }

    // Freezes exactly the listed blocks and unfreezes the rest.
    void set_frozen_blocks(const std::set<std::size_t>& blocks) {
        for (std::size_t b = 0; b < cfg_.num_blocks(); ++b) set_block_frozen(b, blocks.count(b) != 0);
    }

    bool block_frozen(std::size_t block) const {
        const auto owner = cfg_.layer_blocks();
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (owner[i] == block && !layers_[i].weight.frozen) return false;
        }
        return true;
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        for (Linear& l : layers_) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        }
        return out;
    }

private:
    std::size_t lowest_trainable_layer() const {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (!layers_[i].weight.frozen || !layers_[i].bias.frozen) return i;
        }
        return layers_.size();
    }

    BackboneConfig cfg_;
    std::vector<Linear> layers_;
};

enum class HeadKind : std::uint8_t { rotation = 0, labelled = 1, unlabelled = 2, incremental = 3 };

inline const char* head_kind_name(HeadKind k) {
    switch (k) {
        case HeadKind::rotation: return "rotation";
        case HeadKind::labelled: return "labelled";
        case HeadKind::unlabelled: return "unlabelled";
        case HeadKind::incremental: return "incremental";
    }
    return "unknown";
}

// Linear layer followed by a softmax.
class Head {
public:
    Head() = default;
    Head(HeadKind kind, std::size_t feature_dim, std::size_t outputs, Rng& rng)
        : kind_(kind), layer_(feature_dim, checked_outputs(kind, outputs), rng) {}
    Head(HeadKind kind, Linear layer) : kind_(kind), layer_(std::move(layer)) {}

    HeadKind kind() const noexcept { return kind_; }
    std::size_t outputs() const noexcept { return layer_.out(); }
    std::size_t feature_dim() const noexcept { return layer_.in(); }
    Linear& layer() noexcept { return layer_; }
    const Linear& layer() const noexcept { return layer_; }

    Tensor logits(const Tensor& z) const { return layer_.forward(z); }

    // Probability rows [B x outputs].
    Tensor forward(const Tensor& z) const { return softmax_rows(layer_.forward(z)); }

    // Given the probabilities from forward(z) and dL/dprobs, accumulates head
    // gradients and returns dL/dz.
    Tensor backward(const Tensor& z, const Tensor& probs, const Tensor& grad_probs) {
        return layer_.backward(z, softmax_rows_backward(probs, grad_probs), true);
    }

    std::vector<Parameter*> parameters() { return {&layer_.weight, &layer_.bias}; }

private:
    // Runs before the layer is built so a bad count surfaces as ArgumentError
    // rather than a zero-width tensor error.
    static std::size_t checked_outputs(HeadKind kind, std::size_t outputs) {
        if (outputs == 0) throw ArgumentError("head needs at least one output");
        if (kind == HeadKind::rotation && outputs != 4) throw ArgumentError("rotation head has exactly 4 outputs");
        return outputs;
    }

    HeadKind kind_ = HeadKind::labelled;
    Linear layer_;
};

// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

// Cluster prediction from an unlabelled head's probability row. For an
// incremental head pass the new-class slice, e.g. probs.subspan(C_l).
inline std::size_t predict_unlabelled(std::span<const double> head_output) {
    if (head_output.empty()) throw ArgumentError("empty head output");
    return argmax(head_output);
}

inline std::size_t predict_unlabelled(const Head& head_u, std::span<const double> z) {
    if (head_u.kind() != HeadKind::unlabelled) {
        throw StateError(std::string("predict_unlabelled needs an unlabelled head, got ") + head_kind_name(head_u.kind()));
    }
    Tensor zt({1, z.size()}, std::vector<double>(z.begin(), z.end()));
    Tensor p = head_u.forward(zt);
    return argmax(p.row(0));
}

// Widens a labelled head by new_classes outputs. Old columns are copied
// bit-for-bit; new columns come from the fan-based initializer.
inline Head extend_head(const Head& head_l, std::size_t new_classes, Rng& rng) {
    if (head_l.kind() != HeadKind::labelled) {
        throw ArgumentError(std::string("extend_head needs a labelled head, got ") + head_kind_name(head_l.kind()));
    }
    if (new_classes == 0) throw ArgumentError("extend_head: number of new classes must be positive");
    const std::size_t d = head_l.feature_dim();
    const std::size_t old_out = head_l.outputs();
    const std::size_t out = old_out + new_classes;
    Linear fresh(d, out, rng);
    Linear ext;
    ext.weight = Parameter(Tensor({d, out}));
    ext.bias = Parameter(Tensor({out}));
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < out; ++c) {
            ext.weight.value.at(r, c) = c < old_out ? head_l.layer().weight.value.at(r, c) : fresh.weight.value.at(r, c);
        }
    }
    for (std::size_t c = 0; c < out; ++c) ext.bias.value[c] = c < old_out ? head_l.layer().bias.value[c] : 0.0;
    return Head(HeadKind::incremental, std::move(ext));
}

// Pipeline progress recorded in checkpoints.
enum class Stage : std::uint8_t { initial = 0, pretrained = 1, finetuned = 2, discovered = 3, incremental = 4 };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::initial: return "initial";
        case Stage::pretrained: return "pretrained";
        case Stage::finetuned: return "finetuned";
        case Stage::discovered: return "discovered";
        case Stage::incremental: return "incremental";
    }
    return "unknown";
}

struct Model {
    Backbone backbone;
    std::optional<Head> rotation;
    std::optional<Head> labelled;  // kind labelled, or incremental after extension
    std::optional<Head> unlabelled;
    Stage stage = Stage::initial;
    std::uint64_t config_digest = 0;
    Rng rng;

    Model() = default;

    // Fresh model; the backbone is initialized from a child of the seed stream.
    Model(const BackboneConfig& cfg, std::uint64_t seed) : rng(seed) {
        Rng init = rng.split("backbone-init");
        backbone = Backbone(cfg, init);
        rng.advance();
    }

    const BackboneConfig& config() const noexcept { return backbone.config(); }

    Tensor features(const Tensor& batch) const { return backbone.forward(batch); }
};

inline Tensor forward_features(const Backbone& backbone, const Tensor& batch) { return backbone.forward(batch); }

} // namespace ncd
