#pragma once

#include <complex>
#include <cstdint>
#include <vector>

namespace sdikit {

inline bool is_pow2(uint64_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 FFT on a power-of-two length buffer.
/// inverse=true applies the conjugate transform and the 1/n scale, so
/// ifft(fft(x)) == x up to rounding.
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse);

/// Circular convolution of two equal power-of-two length real vectors via
/// the frequency domain; result is real part of ifft(fft(a) .* fft(b)).
std::vector<double> circular_convolve(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace sdikit
