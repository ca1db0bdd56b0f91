#pragma once

#include <cstdint>
#include <vector>

#include "sdikit/random.hpp"

namespace sdikit {

/// Carter-Wegman polynomial hash over GF(2^61 - 1). A uniformly random
/// polynomial of degree k-1 evaluated at distinct points gives exactly
/// k-wise independent values in [0, p); degree 1 is the 2-wise bucket
/// hash, degree 3 the 4-wise sign hash.
class KWiseHash {
public:
    static constexpr uint64_t kPrime = (1ULL << 61) - 1;

    KWiseHash() = default;
    KWiseHash(std::vector<uint64_t> coefficients) : coeffs_(std::move(coefficients)) {}

    /// Samples degree+1 coefficients uniformly in [0, p).
    static KWiseHash sample(int degree, std::mt19937_64& rng);

    /// Horner evaluation of the polynomial at x, mod p.
    uint64_t eval(uint64_t x) const {
        uint64_t acc = 0;
        for (size_t i = coeffs_.size(); i-- > 0;) {
            acc = add_mod(mul_mod(acc, x), coeffs_[i]);
        }
        return acc;
    }

    /// Bucket in [0, m). Bias relative to uniform is O(m/p) ~ 2^-41.
    uint32_t bucket(uint64_t x, uint32_t m) const { return static_cast<uint32_t>(eval(x) % m); }

    /// Sign in {-1, +1} from the parity of the field value.
    int sign(uint64_t x) const { return (eval(x) & 1ULL) ? 1 : -1; }

    int degree() const { return static_cast<int>(coeffs_.size()) - 1; }
    const std::vector<uint64_t>& coefficients() const { return coeffs_; }

    static uint64_t add_mod(uint64_t a, uint64_t b) {
        uint64_t s = a + b;  // < 2^62, no overflow
        if (s >= kPrime) s -= kPrime;
        return s;
    }

    static uint64_t mul_mod(uint64_t a, uint64_t b) {
        unsigned __int128 prod = static_cast<unsigned __int128>(a) * b;
        // fold: 2^61 == 1 (mod p)
        uint64_t lo = static_cast<uint64_t>(prod & kPrime);
        uint64_t hi = static_cast<uint64_t>(prod >> 61);
        uint64_t s = lo + hi;
        if (s >= kPrime) s -= kPrime;
        return s;
    }

private:
    std::vector<uint64_t> coeffs_;
};

}  // namespace sdikit
