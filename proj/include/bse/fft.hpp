#pragma once

#include <complex>
#include <vector>

namespace bse {

// Real<->half-complex transforms backed by FFTW, plan cache keyed by length.
// forward: spectrum[k] = sum_n x[n] exp(-i 2 pi k n / N), k = 0..N/2
// inverse: unnormalized adjoint-style synthesis; inverse(forward(x)) == N * x.

std::vector<std::complex<double>> rfft(const std::vector<double>& x);
std::vector<double> irfft(const std::vector<std::complex<double>>& spec, int n);

// In-place variants writing into caller buffers (n real samples, n/2+1 bins).
void rfft_into(const double* x, int n, std::complex<double>* out);
void irfft_into(const std::complex<double>* spec, int n, double* out);

}  // namespace bse
