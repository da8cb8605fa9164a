#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace tdm {

/// 64-bit FNV-1a. Used for substream naming and artifact content hashes.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic seeded generator (splitmix64 core). All randomness flows from
// one root seed through named substreams, so module outputs are reproducible
// and independent of each other and of worker count. No std:: distributions:
// their output is implementation-defined, which would break bitwise
// reproducibility contracts.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    /// Child generator derived from this generator's seed (not its current
    /// state), so substreams are independent of draw order.
    Rng substream(std::string_view name) const {
        return Rng(mix(seed_, fnv1a64(name)));
    }
    Rng substream(std::uint64_t index) const {
        std::uint64_t s = index;
        return Rng(mix(seed_, splitmix64(s)));
    }

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n), rejection sampled.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t partial = (UINT64_MAX % n + 1) % n;  // 2^64 mod n
        std::uint64_t x = next_u64();
        if (partial != 0) {
            const std::uint64_t cutoff = 0 - partial;
            while (x >= cutoff) x = next_u64();
        }
        return x % n;
    }

    /// Inclusive integer range.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + std::int64_t(below(std::uint64_t(hi - lo) + 1));
    }

    /// Box-Muller; caches the spare deviate.
    double normal(double mean = 0.0, double sd = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + sd * spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return mean + sd * r * std::cos(a);
    }

private:
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
        return splitmix64(s);
    }

    std::uint64_t seed_;
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace tdm
