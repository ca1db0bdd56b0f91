#pragma once

#include <cstdint>
#include <random>

namespace sdikit {

/// splitmix64 finalizer; used to derive independent sub-seeds from a master
/// seed without correlating the downstream mt19937_64 streams.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Sub-seed for stream `index` of master `seed`. Stable across platforms.
inline uint64_t subseed(uint64_t seed, uint64_t index) {
    return splitmix64(seed ^ splitmix64(index + 1));
}

/// Uniform draw in [0, bound) by rejection on raw mt19937_64 output.
/// std::uniform_int_distribution is implementation-defined; this is not.
inline uint64_t uniform_below(std::mt19937_64& rng, uint64_t bound) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t v;
    do {
        v = rng();
    } while (v >= limit);
    return v % bound;
}

/// Uniform double in [0, 1) with 53-bit resolution.
inline double uniform_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller on raw engine output (deterministic,
/// unlike std::normal_distribution).
class GaussianDraw {
public:
    explicit GaussianDraw(std::mt19937_64& rng) : rng_(rng) {}

    double operator()() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform_unit(rng_);
        double u2 = uniform_unit(rng_);
        // guard log(0)
        double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        double theta = 6.283185307179586477 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::mt19937_64& rng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace sdikit
