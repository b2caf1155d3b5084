#include "bse/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <stdexcept>

namespace bse {
namespace {

struct PlanPair {
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;
  double* real_buf = nullptr;
  fftw_complex* cplx_buf = nullptr;
};

std::mutex g_mutex;

// Caller must hold g_mutex.
PlanPair& plans_for(int n) {
  static std::map<int, PlanPair> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  PlanPair p;
  p.real_buf = fftw_alloc_real(n);
  p.cplx_buf = fftw_alloc_complex(n / 2 + 1);
  p.fwd = fftw_plan_dft_r2c_1d(n, p.real_buf, p.cplx_buf, FFTW_ESTIMATE);
  p.inv = fftw_plan_dft_c2r_1d(n, p.cplx_buf, p.real_buf, FFTW_ESTIMATE);
  return cache.emplace(n, p).first->second;
}

}  // namespace

void rfft_into(const double* x, int n, std::complex<double>* out) {
  if (n <= 0) throw std::invalid_argument("rfft: empty input");
  std::lock_guard<std::mutex> lock(g_mutex);
  PlanPair& p = plans_for(n);
  for (int i = 0; i < n; ++i) p.real_buf[i] = x[i];
  fftw_execute(p.fwd);
  for (int k = 0; k <= n / 2; ++k)
    out[k] = {p.cplx_buf[k][0], p.cplx_buf[k][1]};
}

void irfft_into(const std::complex<double>* spec, int n, double* out) {
  if (n <= 0) throw std::invalid_argument("irfft: empty output length");
  std::lock_guard<std::mutex> lock(g_mutex);
  PlanPair& p = plans_for(n);
  for (int k = 0; k <= n / 2; ++k) {
    p.cplx_buf[k][0] = spec[k].real();
    p.cplx_buf[k][1] = spec[k].imag();
  }
  // FFTW c2r assumes a Hermitian input; the DC and Nyquist imaginary parts
  // carry no information about the real output, so they are zeroed to keep
  // the map well defined for arbitrary inputs.
  p.cplx_buf[0][1] = 0.0;
  if (n % 2 == 0) p.cplx_buf[n / 2][1] = 0.0;
  fftw_execute(p.inv);
  for (int i = 0; i < n; ++i) out[i] = p.real_buf[i];
}

std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
  std::vector<std::complex<double>> out(x.size() / 2 + 1);
  rfft_into(x.data(), static_cast<int>(x.size()), out.data());
  return out;
}

std::vector<double> irfft(const std::vector<std::complex<double>>& spec, int n) {
  if (static_cast<int>(spec.size()) != n / 2 + 1)
    throw std::invalid_argument("irfft: spectrum size does not match n");
  std::vector<double> out(n);
  irfft_into(spec.data(), n, out.data());
  return out;
}

}  // namespace bse
