#pragma once

#include <cstddef>
#include <span>

namespace sdikit {

/// Pairwise (cascade) summation. O(log n) error growth instead of O(n);
/// the variance oracle identities are checked at 1e-9 relative, which naive
/// accumulation does not reliably hit for large inputs.
inline double pairwise_sum(std::span<const double> v) {
    const size_t n = v.size();
    if (n <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const size_t half = n / 2;
    return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

/// Pairwise sum of f(i) for i in [0, n) evaluated lazily.
template <typename F>
double pairwise_sum_indexed(size_t begin, size_t end, F&& f) {
    const size_t n = end - begin;
    if (n <= 8) {
        double s = 0.0;
        for (size_t i = begin; i < end; ++i) s += f(i);
        return s;
    }
    const size_t mid = begin + n / 2;
    return pairwise_sum_indexed(begin, mid, f) + pairwise_sum_indexed(mid, end, f);
}

}  // namespace sdikit
