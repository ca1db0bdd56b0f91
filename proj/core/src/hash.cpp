#include "sdikit/hash.hpp"

namespace sdikit {

KWiseHash KWiseHash::sample(int degree, std::mt19937_64& rng) {
    std::vector<uint64_t> coeffs(static_cast<size_t>(degree) + 1);
    for (auto& c : coeffs) c = uniform_below(rng, kPrime);
    return KWiseHash(std::move(coeffs));
}

}  // namespace sdikit
