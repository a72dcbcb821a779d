#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "ncd/errors.hpp"

namespace ncd {

// 64-bit FNV-1a; used for seed derivation and config digests.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// The one source of randomness. Child streams are derived by tag without
// consuming the parent, so adding a consumer never perturbs its siblings.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

    Rng split(std::string_view tag) const {
        const std::uint64_t h = fnv1a(tag, fnv1a(state()));
        return Rng(h);
    }

    // Moves the stream forward so the next stage's splits differ from this one's.
    void advance() { engine_.discard(1); }

    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }

    // Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        if (n == 0) throw ArgumentError("Rng::index needs a nonempty range");
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }

    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

    bool bernoulli(double p) { return uniform() < p; }

    std::mt19937_64& engine() noexcept { return engine_; }

    std::string state() const {
        std::ostringstream out;
        out << engine_;
        return out.str();
    }

    void set_state(const std::string& s) {
        std::istringstream in(s);
        std::mt19937_64 e;
        in >> e;
        if (in.fail()) throw ArgumentError("malformed generator state");
        engine_ = e;
    }

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    void reseed(std::uint64_t seed) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
        engine_.seed(seq);
    }

    std::mt19937_64 engine_;
};

} // namespace ncd
