#pragma once

// IDX (MNIST-style) reader and writer. Images: magic 0x00000803, then
// big-endian u32 count, rows, cols, then count*rows*cols unsigned bytes.
// Labels: magic 0x00000801, u32 count, then count unsigned bytes.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "ncd/checkpoint.hpp"
#include "ncd/data.hpp"
#include "ncd/errors.hpp"

namespace ncd {

inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

namespace detail {

inline std::uint32_t be32(std::string_view bytes, std::size_t at, const char* what) {
    if (bytes.size() < at + 4) throw ParseError(std::string("truncated IDX header while reading ") + what, at);
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[at + i]);
    return v;
}

inline void put_be32(std::string& out, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

} // namespace detail

struct IdxImages {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> pixels;
};

inline IdxImages parse_idx_images(std::string_view bytes) {
    const std::uint32_t magic = detail::be32(bytes, 0, "magic");
    if (magic != kIdxImageMagic) throw ParseError("bad IDX image magic", 0);
    IdxImages out;
    out.count = detail::be32(bytes, 4, "image count");
    out.rows = detail::be32(bytes, 8, "row count");
    out.cols = detail::be32(bytes, 12, "column count");
    if (out.rows == 0 || out.cols == 0) throw ParseError("IDX image dimensions must be positive", 8);
    const std::size_t payload = out.count * out.rows * out.cols;
    if (bytes.size() - 16 != payload) {
        throw ParseError("IDX image payload holds " + std::to_string(bytes.size() - 16) + " bytes but the header declares " +
                             std::to_string(payload),
                         std::min(bytes.size(), 16 + payload));
    }
    out.pixels.assign(bytes.begin() + 16, bytes.end());
    return out;
}

inline std::vector<std::uint8_t> parse_idx_labels(std::string_view bytes) {
    const std::uint32_t magic = detail::be32(bytes, 0, "magic");
    if (magic != kIdxLabelMagic) throw ParseError("bad IDX label magic", 0);
    const std::size_t count = detail::be32(bytes, 4, "label count");
    if (bytes.size() - 8 != count) {
        throw ParseError("IDX label payload holds " + std::to_string(bytes.size() - 8) + " bytes but the header declares " +
                             std::to_string(count),
                         std::min(bytes.size(), 8 + count));
    }
    return {bytes.begin() + 8, bytes.end()};
}

// Loads an image/label pair; pixels scaled to [0, 1], class count = max label + 1.
inline Dataset read_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const IdxImages imgs = parse_idx_images(read_file_bytes(images_path));
    const auto labels = parse_idx_labels(read_file_bytes(labels_path));
    if (labels.size() != imgs.count) {
        throw ArgumentError("IDX files disagree: " + std::to_string(imgs.count) + " images but " +
                            std::to_string(labels.size()) + " labels");
    }
    Dataset ds;
    ds.shape = ImageShape{1, imgs.rows, imgs.cols};
    std::vector<double> px(imgs.pixels.size());
    std::transform(imgs.pixels.begin(), imgs.pixels.end(), px.begin(), [](std::uint8_t v) { return v / 255.0; });
    if (imgs.count > 0) ds.images = Tensor({imgs.count, 1, imgs.rows, imgs.cols}, std::move(px));
    ds.labels.assign(labels.begin(), labels.end());
    int mx = -1;
    for (int l : ds.labels) mx = std::max(mx, l);
    ds.num_classes = static_cast<std::size_t>(mx + 1);
    return ds;
}

// Writes a single-channel dataset as an IDX pair; pixels rounded to bytes.
inline void write_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    if (ds.shape.channels != 1) throw ArgumentError("write_idx supports single-channel images only");
    std::string img;
    detail::put_be32(img, kIdxImageMagic);
    detail::put_be32(img, static_cast<std::uint32_t>(ds.size()));
    detail::put_be32(img, static_cast<std::uint32_t>(ds.shape.height));
    detail::put_be32(img, static_cast<std::uint32_t>(ds.shape.width));
    for (double v : ds.images.values()) img.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    std::string lab;
    detail::put_be32(lab, kIdxLabelMagic);
    detail::put_be32(lab, static_cast<std::uint32_t>(ds.size()));
    for (int l : ds.labels) lab.push_back(static_cast<char>(static_cast<std::uint8_t>(l)));
    for (auto [path, bytes] : {std::pair{images_path, &img}, std::pair{labels_path, &lab}}) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
        out.write(bytes->data(), static_cast<std::streamsize>(bytes->size()));
    }
}

// Keeps at most max_per_class samples of each class, preserving file order.
inline Dataset cap_per_class(const Dataset& ds, std::size_t max_per_class) {
    std::vector<std::size_t> seen(ds.num_classes, 0), keep;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto& n = seen[static_cast<std::size_t>(ds.labels[i])];
        if (n < max_per_class) {
            ++n;
            keep.push_back(i);
        }
    }
    Dataset out;
    out.shape = ds.shape;
    out.num_classes = ds.num_classes;
    for (std::size_t i : keep) out.labels.push_back(ds.labels[i]);
    Tensor rows = gather_rows(ds.images, keep);
    out.images = Tensor({keep.size(), ds.shape.channels, ds.shape.height, ds.shape.width},
                        std::vector<double>(rows.values().begin(), rows.values().end()));
    return out;
}

} // namespace ncd
