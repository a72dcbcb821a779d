#pragma once

// Binary checkpoint format. All integers little-endian, doubles as raw
// IEEE-754 bit patterns, so a save/load/save cycle is byte-identical.
//
//   magic        8 bytes  "NCDCKPT\0"
//   version      u32      1
//   digest       u64      config digest of the run that wrote the file
//   stage        u8       Stage marker
//   config       u32 channels, u32 height, u32 width,
//                u32 n_layers, n_layers x u32 widths,
//                u32 n_blocks, n_blocks x u32 block sizes
//   rng          u32 length, then that many bytes of generator state text
//   layers       per layer: weight tensor, bias tensor
//   heads        u32 count, per head: u8 kind, weight tensor, bias tensor
//   checksum     u64      FNV-1a over every preceding byte
//
// A tensor is: u8 frozen, u32 rank, rank x u32 dims, volume x f64.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "ncd/errors.hpp"
#include "ncd/model.hpp"

namespace ncd {

inline constexpr char kCheckpointMagic[8] = {'N', 'C', 'D', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(std::string_view s) { buf_.append(s); }

    void tensor(const Tensor& t, bool frozen) {
        u8(frozen ? 1 : 0);
        u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) u32(static_cast<std::uint32_t>(d));
        for (double v : t.values()) f64(v);
    }

    const std::string& buffer() const noexcept { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n) throw ParseError(std::string("truncated checkpoint while reading ") + what, pos_);
    }

    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
        return v;
    }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
    std::string_view bytes(std::size_t n, const char* what) {
        need(n, what);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    Parameter parameter(const Shape& expected, const char* what) {
        const std::size_t start = pos_;
        const std::uint8_t frozen = u8(what);
        if (frozen > 1) throw ParseError(std::string("bad frozen flag in ") + what, start);
        const std::uint32_t rank = u32(what);
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(u32(what));
        if (shape != expected) {
            throw ParseError(std::string(what) + " has shape " + shape_string(shape) + ", expected " +
                             shape_string(expected),
                             start);
        }
        const std::size_t n = shape_volume(shape);
        need(n * 8, what);
        std::vector<double> values(n);
        for (double& v : values) v = f64(what);
        Parameter p(Tensor(shape, std::move(values)));
        p.frozen = frozen == 1;
        return p;
    }

private:
    std::string_view data_;
    std::size_t pos_ = 0;
};

inline void write_linear(ByteWriter& w, const Linear& l) {
    w.tensor(l.weight.value, l.weight.frozen);
    w.tensor(l.bias.value, l.bias.frozen);
}

inline Linear read_linear(ByteReader& r, std::size_t in, std::size_t out, const char* what) {
    Linear l;
    l.weight = r.parameter({in, out}, what);
    l.bias = r.parameter({out}, what);
    return l;
}

} // namespace detail

inline std::string encode_checkpoint(const Model& model) {
    detail::ByteWriter w;
    w.bytes(std::string_view(kCheckpointMagic, sizeof kCheckpointMagic));
    w.u32(kCheckpointVersion);
    w.u64(model.config_digest);
    w.u8(static_cast<std::uint8_t>(model.stage));

    const BackboneConfig& cfg = model.config();
    w.u32(static_cast<std::uint32_t>(cfg.channels));
    w.u32(static_cast<std::uint32_t>(cfg.height));
    w.u32(static_cast<std::uint32_t>(cfg.width));
    w.u32(static_cast<std::uint32_t>(cfg.layer_widths.size()));
    for (std::size_t v : cfg.layer_widths) w.u32(static_cast<std::uint32_t>(v));
    w.u32(static_cast<std::uint32_t>(cfg.block_sizes.size()));
    for (std::size_t v : cfg.block_sizes) w.u32(static_cast<std::uint32_t>(v));

    const std::string rng_state = model.rng.state();
    w.u32(static_cast<std::uint32_t>(rng_state.size()));
    w.bytes(rng_state);

    for (const Linear& l : model.backbone.layers()) detail::write_linear(w, l);

    std::vector<const Head*> heads;
    for (const auto* h : {&model.rotation, &model.labelled, &model.unlabelled}) {
        if (h->has_value()) heads.push_back(&**h);
    }
    w.u32(static_cast<std::uint32_t>(heads.size()));
    for (const Head* h : heads) {
        w.u8(static_cast<std::uint8_t>(h->kind()));
        detail::write_linear(w, h->layer());
    }

    std::string out = w.buffer();
    detail::ByteWriter tail;
    tail.u64(fnv1a(out));
    out += tail.buffer();
    return out;
}

inline Model decode_checkpoint(std::string_view bytes) {
    detail::ByteReader r(bytes);
    auto magic = r.bytes(sizeof kCheckpointMagic, "magic");
    if (magic != std::string_view(kCheckpointMagic, sizeof kCheckpointMagic)) throw ParseError("not a checkpoint (bad magic)", 0);
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version), r.offset() - 4);
    }
    // Checksum first, so corruption is reported before any partial decoding.
    if (bytes.size() < 8 + r.offset()) throw ParseError("truncated checkpoint while reading checksum", bytes.size());
    {
        detail::ByteReader tail(bytes.substr(bytes.size() - 8));
        const std::uint64_t stored = tail.u64("checksum");
        if (stored != fnv1a(bytes.substr(0, bytes.size() - 8))) {
            throw ParseError("checkpoint checksum mismatch (file is truncated or corrupt)", bytes.size() - 8);
        }
    }
    detail::ByteReader body(bytes.substr(0, bytes.size() - 8));
    body.bytes(sizeof kCheckpointMagic + 4, "header");

    Model m;
    m.config_digest = body.u64("digest");
    const std::size_t stage_at = body.offset();
    const std::uint8_t stage = body.u8("stage");
    if (stage > static_cast<std::uint8_t>(Stage::incremental)) throw ParseError("unknown stage marker", stage_at);
    m.stage = static_cast<Stage>(stage);

    BackboneConfig cfg;
    cfg.channels = body.u32("config");
    cfg.height = body.u32("config");
    cfg.width = body.u32("config");
    const std::size_t list_at = body.offset();
    const std::uint32_t n_layers = body.u32("config");
    if (n_layers > 4096) throw ParseError("implausible layer count", list_at);
    cfg.layer_widths.clear();
    for (std::uint32_t i = 0; i < n_layers; ++i) cfg.layer_widths.push_back(body.u32("config"));
    const std::size_t blocks_at = body.offset();
    const std::uint32_t n_blocks = body.u32("config");
    if (n_blocks > 4096) throw ParseError("implausible block count", blocks_at);
    cfg.block_sizes.clear();
    for (std::uint32_t i = 0; i < n_blocks; ++i) cfg.block_sizes.push_back(body.u32("config"));
    if (auto p = cfg.problems(); !p.empty()) throw ParseError("invalid backbone config: " + p.front(), list_at);

    const std::size_t rng_at = body.offset();
    const std::uint32_t rng_len = body.u32("rng state");
    const std::string rng_state(body.bytes(rng_len, "rng state"));
    try {
        m.rng.set_state(rng_state);
    } catch (const ArgumentError&) {
        throw ParseError("malformed rng state", rng_at);
    }

    // Layers are rebuilt from the stored payload, not re-initialized.
    Rng scratch(0);
    Backbone bb(cfg, scratch);
    std::size_t in = cfg.input_size();
    for (std::size_t i = 0; i < cfg.layer_widths.size(); ++i) {
        bb.layers()[i] = detail::read_linear(body, in, cfg.layer_widths[i], "backbone layer");
        in = cfg.layer_widths[i];
    }
    m.backbone = std::move(bb);

    const std::size_t heads_at = body.offset();
    const std::uint32_t n_heads = body.u32("head count");
    if (n_heads > 3) throw ParseError("too many heads", heads_at);
    for (std::uint32_t i = 0; i < n_heads; ++i) {
        const std::size_t kind_at = body.offset();
        const std::uint8_t kind = body.u8("head kind");
        if (kind > static_cast<std::uint8_t>(HeadKind::incremental)) throw ParseError("unknown head kind", kind_at);
        // Output width is read from the tensor header without consuming it.
        detail::ByteReader peek(bytes.substr(body.offset(), 1 + 4 + 8));
        peek.u8("head");
        if (peek.u32("head") != 2) throw ParseError("head weight must be a matrix", body.offset());
        const std::size_t rows = peek.u32("head");
        const std::size_t cols = peek.u32("head");
        if (rows != cfg.feature_dim()) throw ParseError("head input width does not match feature dim", body.offset());
        Head h(static_cast<HeadKind>(kind), detail::read_linear(body, rows, cols, "head"));
        std::optional<Head>* slot = nullptr;
        switch (h.kind()) {
            case HeadKind::rotation: slot = &m.rotation; break;
            case HeadKind::labelled:
            case HeadKind::incremental: slot = &m.labelled; break;
            case HeadKind::unlabelled: slot = &m.unlabelled; break;
        }
        if (slot->has_value()) throw ParseError("duplicate head", kind_at);
        *slot = std::move(h);
    }
    if (body.remaining() != 0) throw ParseError("trailing bytes after checkpoint payload", body.offset());
    return m;
}

inline void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    const std::string bytes = encode_checkpoint(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline Model load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

// Loads and insists on a matching backbone layout.
inline Model load_checkpoint(const std::filesystem::path& path, const BackboneConfig& expected) {
    Model m = load_checkpoint(path);
    if (!(m.config() == expected)) {
        throw IncompatibleError("checkpoint " + path.string() + " was written for a different backbone configuration");
    }
    return m;
}

} // namespace ncd
