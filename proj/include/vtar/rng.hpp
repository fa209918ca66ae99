#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace vtar {

/// splitmix64 finalizer; derives decorrelated stream seeds from a base
/// seed and a stream index (per-clip, per-epoch, per-class streams).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Seeded generator with all distribution transforms implemented here.
/// std::*_distribution output is implementation-defined, so none of it
/// is used; identical seeds give identical streams on every platform
/// that ships a conforming mt19937.
class Rng {
public:
    explicit Rng(std::uint64_t seed)
        : gen_(static_cast<std::uint32_t>(mix_seed(seed, 0) >> 16)) {}

    std::uint32_t next_u32() { return gen_(); }

    /// Uniform double in [0,1) with 53 random bits.
    double uniform() {
        const std::uint64_t hi = next_u32() >> 5;  // 27 bits
        const std::uint64_t lo = next_u32() >> 6;  // 26 bits
        return (static_cast<double>(hi) * 67108864.0 + static_cast<double>(lo)) /
               9007199254740992.0;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n) via rejection.
    std::size_t below(std::size_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = (0x1'0000'0000ull / n) * n;
        std::uint64_t x;
        do {
            x = next_u32();
        } while (x >= limit);
        return static_cast<std::size_t>(x % n);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Box-Muller normal with a cached spare.
    double normal(double mean = 0.0, double stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + spare_ * stddev;
        }
        const double angle = uniform() * 6.283185307179586;
        const double radius = std::sqrt(-2.0 * std::log(1.0 - uniform()));
        spare_ = std::sin(angle) * radius;
        has_spare_ = true;
        return mean + std::cos(angle) * radius * stddev;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace vtar
