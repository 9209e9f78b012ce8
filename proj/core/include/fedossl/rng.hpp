#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace fedossl {

// Deterministic random stream. Wraps std::mt19937_64 but derives all
// variates through fixed arithmetic (no distribution objects), because
// the standard leaves std::uniform_real_distribution etc. implementation
// defined and we promise bitwise-reproducible runs across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Unbiased integer in [0, n) via rejection sampling. n must be > 0.
    uint64_t uniform_int(uint64_t n) {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller; caches the second variate.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Fisher-Yates shuffle, high-to-low, using uniform_int.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

namespace detail {
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
} // namespace detail

// Stable sub-stream seed derivation: each tag folds into the state through
// splitmix64 so that (seed, round, client, ...) tuples map to well-separated
// seeds regardless of tag magnitudes.
inline uint64_t derive_seed(uint64_t base) { return detail::splitmix64(base); }

template <typename... Rest>
uint64_t derive_seed(uint64_t base, uint64_t tag, Rest... rest) {
    return derive_seed(detail::splitmix64(base ^ detail::splitmix64(tag)), rest...);
}

} // namespace fedossl
