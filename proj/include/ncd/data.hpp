#pragma once

// Datasets, labelled/unlabelled splits, the synthetic shape generator,
// augmentation, right-angle rotations and batching.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ncd/errors.hpp"
#include "ncd/rng.hpp"
#include "ncd/tensor.hpp"

namespace ncd {

struct ImageShape {
    std::size_t channels = 1;
    std::size_t height = 16;
    std::size_t width = 16;

    std::size_t pixels() const noexcept { return channels * height * width; }
    friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

// Labelled image collection. images is [N x C x H x W], values in [0, 1].
// For the unlabelled split the labels are ground truth kept for evaluation
// only; training code receives an ImageSet instead.
struct Dataset {
    ImageShape shape;
    Tensor images;
    std::vector<int> labels;
    std::size_t num_classes = 0;
    bool labels_hidden = false;

    std::size_t size() const noexcept { return labels.size(); }
    std::span<const double> image(std::size_t i) const { return images.row(i); }
};

// Images without labels: the only view of the unlabelled split that the
// training stages accept.
struct ImageSet {
    ImageShape shape;
    Tensor images;

    std::size_t size() const noexcept { return images.rows(); }
    std::span<const double> image(std::size_t i) const { return images.row(i); }
};

inline ImageSet strip_labels(const Dataset& ds) { return ImageSet{ds.shape, ds.images}; }

inline ImageSet concat(const ImageSet& a, const ImageSet& b) {
    if (!(a.shape == b.shape)) throw DimensionError("concat: image shapes differ");
    std::vector<double> data(a.images.values().begin(), a.images.values().end());
    data.insert(data.end(), b.images.values().begin(), b.images.values().end());
    return ImageSet{a.shape, Tensor({a.size() + b.size(), a.shape.channels, a.shape.height, a.shape.width}, std::move(data))};
}

// Rows of images selected by index, as a [B x pixels] matrix.
inline Tensor gather_rows(const Tensor& images, std::span<const std::size_t> indices) {
    const std::size_t w = images.cols();
    std::vector<double> out;
    out.reserve(indices.size() * w);
    for (std::size_t i : indices) {
        auto r = images.row(i);
        out.insert(out.end(), r.begin(), r.end());
    }
    return Tensor({indices.size(), w}, std::move(out));
}

struct SplitSpec {
    std::vector<int> labelled_classes;
    std::vector<int> unlabelled_classes;

    std::vector<std::string> problems() const {
        std::vector<std::string> out;
        if (labelled_classes.empty()) out.emplace_back("split: labelled class list is empty");
        if (unlabelled_classes.empty()) out.emplace_back("split: unlabelled class list is empty");
        std::set<int> seen;
        for (const auto* list : {&labelled_classes, &unlabelled_classes}) {
            for (int c : *list) {
                if (!seen.insert(c).second) out.push_back("split: class " + std::to_string(c) + " listed twice");
            }
        }
        return out;
    }

    std::size_t num_labelled() const noexcept { return labelled_classes.size(); }
    std::size_t num_unlabelled() const noexcept { return unlabelled_classes.size(); }
};

struct SplitResult {
    Dataset labelled;
    Dataset unlabelled;  // labels_hidden; labels are ground truth in [0, C_u)
};

namespace detail {

inline Dataset select_classes(const Dataset& ds, const std::vector<int>& classes) {
    std::vector<int> remap(ds.num_classes, -1);
    for (std::size_t i = 0; i < classes.size(); ++i) remap[static_cast<std::size_t>(classes[i])] = static_cast<int>(i);
    std::vector<std::size_t> keep;
    std::vector<int> labels;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const int m = remap[static_cast<std::size_t>(ds.labels[i])];
        if (m >= 0) {
            keep.push_back(i);
            labels.push_back(m);
        }
    }
    Dataset out;
    out.shape = ds.shape;
    out.num_classes = classes.size();
    out.labels = std::move(labels);
    if (!keep.empty()) {
        Tensor rows = gather_rows(ds.images, keep);
        out.images = Tensor({keep.size(), ds.shape.channels, ds.shape.height, ds.shape.width},
                            std::vector<double>(rows.values().begin(), rows.values().end()));
    }
    return out;
}

} // namespace detail

// Partitions a dataset into the labelled and unlabelled class sets, remapping
// labels to [0, C_l) and [0, C_u) in the order the split lists them.
inline SplitResult apply_split(const Dataset& ds, const SplitSpec& spec) {
    if (auto p = spec.problems(); !p.empty()) throw ArgumentError(p.front());
    for (const auto* list : {&spec.labelled_classes, &spec.unlabelled_classes}) {
        for (int c : *list) {
            if (c < 0 || static_cast<std::size_t>(c) >= ds.num_classes) {
                throw ArgumentError("split: class " + std::to_string(c) + " does not exist in a dataset of " +
                                    std::to_string(ds.num_classes) + " classes");
            }
        }
    }
    SplitResult out{detail::select_classes(ds, spec.labelled_classes), detail::select_classes(ds, spec.unlabelled_classes)};
    out.unlabelled.labels_hidden = true;
    return out;
}

// Counter-clockwise rotation by quarter_turns * 90 degrees; exact pixel permutation.
inline std::vector<double> rotate_right_angle(std::span<const double> img, const ImageShape& shape, int quarter_turns) {
    if (shape.height != shape.width) throw ArgumentError("rotate_right_angle needs a square image");
    if (img.size() != shape.pixels()) throw DimensionError("rotate_right_angle: image size does not match its shape");
    const int q = ((quarter_turns % 4) + 4) % 4;
    const std::size_t n = shape.width;
    const std::size_t plane = n * n;
    std::vector<double> out(img.size());
    for (std::size_t ch = 0; ch < shape.channels; ++ch) {
        const double* src = img.data() + ch * plane;
        double* dst = out.data() + ch * plane;
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                std::size_t sr = r, sc = c;
                switch (q) {
                    case 1: sr = c; sc = n - 1 - r; break;
                    case 2: sr = n - 1 - r; sc = n - 1 - c; break;
                    case 3: sr = n - 1 - c; sc = r; break;
                    default: break;
                }
                dst[r * n + c] = src[sr * n + sc];
            }
        }
    }
    return out;
}

struct AugmentSpec {
    double flip_prob = 0.5;
    int crop_pad = 2;  // zero-pad by this many pixels, then crop back at a random offset

    static AugmentSpec disabled() { return AugmentSpec{0.0, 0}; }
    bool enabled() const noexcept { return flip_prob > 0.0 || crop_pad > 0; }
};

inline std::vector<double> flip_horizontal(std::span<const double> img, const ImageShape& shape) {
    std::vector<double> out(img.size());
    for (std::size_t ch = 0; ch < shape.channels; ++ch) {
        for (std::size_t r = 0; r < shape.height; ++r) {
            const std::size_t base = (ch * shape.height + r) * shape.width;
            for (std::size_t c = 0; c < shape.width; ++c) out[base + c] = img[base + shape.width - 1 - c];
        }
    }
    return out;
}

// Shifts content by (dy, dx), filling with zeros.
inline std::vector<double> shift_image(std::span<const double> img, const ImageShape& shape, int dy, int dx) {
    std::vector<double> out(img.size(), 0.0);
    const int h = static_cast<int>(shape.height), w = static_cast<int>(shape.width);
    for (std::size_t ch = 0; ch < shape.channels; ++ch) {
        const std::size_t plane = ch * shape.height * shape.width;
        for (int r = 0; r < h; ++r) {
            const int sr = r - dy;
            if (sr < 0 || sr >= h) continue;
            for (int c = 0; c < w; ++c) {
                const int sc = c - dx;
                if (sc < 0 || sc >= w) continue;
                out[plane + static_cast<std::size_t>(r * w + c)] = img[plane + static_cast<std::size_t>(sr * w + sc)];
            }
        }
    }
    return out;
}

// Random horizontal flip followed by a pad-and-crop jitter.
inline std::vector<double> augment(std::span<const double> img, const ImageShape& shape, const AugmentSpec& spec, Rng& rng) {
    std::vector<double> out(img.begin(), img.end());
    if (spec.flip_prob > 0.0 && rng.bernoulli(spec.flip_prob)) out = flip_horizontal(out, shape);
    if (spec.crop_pad > 0) {
        const int dy = rng.integer(-spec.crop_pad, spec.crop_pad);
        const int dx = rng.integer(-spec.crop_pad, spec.crop_pad);
        if (dy != 0 || dx != 0) out = shift_image(out, shape, dy, dx);
    }
    return out;
}

inline Tensor augment_rows(const Tensor& batch, const ImageShape& shape, const AugmentSpec& spec, Rng& rng) {
    Tensor out(batch.shape());
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        auto a = augment(batch.row(r), shape, spec, rng);
        std::copy(a.begin(), a.end(), out.row(r).begin());
    }
    return out;
}

// One epoch of shuffled index batches; the last batch may be short.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
    if (batch_size == 0) throw ArgumentError("batch size must be at least 1");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic shapes: ten 16x16 grayscale glyph classes with a canonical
// orientation (so rotations are recognisable), rendered under random
// translation, scale, small tilt, stroke width, contrast and pixel noise.
// ---------------------------------------------------------------------------

inline constexpr std::size_t kSynthMaxClasses = 10;
inline constexpr std::size_t kSynthSide = 16;

namespace detail {

struct Pt {
    double x, y;
};

inline double segment_distance(Pt p, Pt a, Pt b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double wx = p.x - a.x, wy = p.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? (wx * vx + wy * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = wx - t * vx, dy = wy - t * vy;
    return std::sqrt(dx * dx + dy * dy);
}

// Even-odd point-in-polygon.
inline bool inside_polygon(Pt p, std::span<const Pt> poly) {
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        if ((poly[i].y > p.y) != (poly[j].y > p.y) &&
            p.x < (poly[j].x - poly[i].x) * (p.y - poly[i].y) / (poly[j].y - poly[i].y) + poly[i].x) {
            in = !in;
        }
    }
    return in;
}

// Glyph coverage at p in glyph coordinates ([-1, 1]^2, y pointing down).
inline bool glyph_covers(std::size_t cls, Pt p, double stroke) {
    auto seg = [&](double x0, double y0, double x1, double y1) {
        return segment_distance(p, {x0, y0}, {x1, y1}) <= stroke;
    };
    switch (cls) {
        case 0:  // T
            return seg(-0.6, -0.6, 0.6, -0.6) || seg(0.0, -0.6, 0.0, 0.65);
        case 1:  // L
            return seg(-0.45, -0.65, -0.45, 0.6) || seg(-0.45, 0.6, 0.55, 0.6);
        case 2: {  // filled triangle, apex up
            const Pt tri[] = {{0.0, -0.65}, {0.65, 0.55}, {-0.65, 0.55}};
            return inside_polygon(p, tri);
        }
        case 3:  // arrow pointing up
            return seg(0.0, -0.65, 0.0, 0.65) || seg(0.0, -0.65, -0.5, -0.15) || seg(0.0, -0.65, 0.5, -0.15);
        case 4:  // upper half disc
            return p.y <= 0.15 && (p.x * p.x + (p.y - 0.15) * (p.y - 0.15)) <= 0.65 * 0.65;
        case 5:  // F
            return seg(-0.4, -0.65, -0.4, 0.65) || seg(-0.4, -0.65, 0.5, -0.65) || seg(-0.4, -0.05, 0.3, -0.05);
        case 6:  // U
            return seg(-0.5, -0.6, -0.5, 0.5) || seg(0.5, -0.6, 0.5, 0.5) || seg(-0.5, 0.5, 0.5, 0.5);
        case 7:  // dot over a bar
            return (p.x * p.x + (p.y + 0.35) * (p.y + 0.35)) <= 0.3 * 0.3 || seg(-0.6, 0.5, 0.6, 0.5);
        case 8:  // seven
            return seg(-0.55, -0.6, 0.55, -0.6) || seg(0.55, -0.6, -0.15, 0.65);
        case 9: {  // flag: pole with a filled pennant top-right
            const Pt flag[] = {{-0.35, -0.65}, {0.6, -0.65}, {0.6, -0.05}, {-0.35, -0.05}};
            return seg(-0.35, -0.65, -0.35, 0.65) || inside_polygon(p, flag);
        }
        default:
            return false;
    }
}

inline void render_glyph(std::size_t cls, Rng& rng, std::span<double> out) {
    const double side = static_cast<double>(kSynthSide);
    const double tx = rng.uniform(-0.13, 0.13);
    const double ty = rng.uniform(-0.13, 0.13);
    const double scale = rng.uniform(0.91, 1.09);
    const double tilt = rng.uniform(-0.12, 0.12);
    const double stroke = rng.uniform(0.09, 0.16);
    const double contrast = rng.uniform(0.6, 1.0);
    const double ct = std::cos(tilt), st = std::sin(tilt);
    constexpr int kSuper = 3;
    for (std::size_t r = 0; r < kSynthSide; ++r) {
        for (std::size_t c = 0; c < kSynthSide; ++c) {
            int hits = 0;
            for (int sy = 0; sy < kSuper; ++sy) {
                for (int sx = 0; sx < kSuper; ++sx) {
                    const double u = (static_cast<double>(c) + (sx + 0.5) / kSuper) / side * 2.0 - 1.0 - tx;
                    const double v = (static_cast<double>(r) + (sy + 0.5) / kSuper) / side * 2.0 - 1.0 - ty;
                    const Pt q{(ct * u + st * v) / scale, (-st * u + ct * v) / scale};
                    if (glyph_covers(cls, q, stroke)) ++hits;
                }
            }
            const double cover = static_cast<double>(hits) / (kSuper * kSuper);
            const double value = contrast * cover + rng.normal(0.0, 0.05);
            out[r * kSynthSide + c] = std::clamp(value, 0.0, 1.0);
        }
    }
}

} // namespace detail

// n_per_class samples of each of the first `classes` glyphs, class-major order.
inline Dataset synth_shapes(std::size_t n_per_class, std::size_t classes, std::uint64_t seed) {
    if (n_per_class < 1) throw ArgumentError("synth_shapes: n_per_class must be at least 1");
    if (classes < 1 || classes > kSynthMaxClasses) {
        throw ArgumentError("synth_shapes: classes must lie in [1, " + std::to_string(kSynthMaxClasses) + "]");
    }
    Dataset ds;
    ds.shape = ImageShape{1, kSynthSide, kSynthSide};
    ds.num_classes = classes;
    const std::size_t n = n_per_class * classes;
    ds.images = Tensor({n, 1, kSynthSide, kSynthSide});
    ds.labels.reserve(n);
    Rng rng(seed);
    for (std::size_t cls = 0; cls < classes; ++cls) {
        for (std::size_t i = 0; i < n_per_class; ++i) {
            detail::render_glyph(cls, rng, ds.images.row(ds.labels.size()));
            ds.labels.push_back(static_cast<int>(cls));
        }
    }
    return ds;
}

} // namespace ncd
