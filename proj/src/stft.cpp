#include "bse/stft.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bse/fft.hpp"

namespace bse {

namespace {
constexpr double kPi = 3.14159265358979323846;

// Per-sample overlap-add normalization: sum_l wa[n-l*hop] * ws[n-l*hop].
std::vector<double> ola_denominator(const std::vector<double>& wa, const std::vector<double>& ws,
                                    int frames, int hop) {
  int wl = static_cast<int>(wa.size());
  std::vector<double> denom(static_cast<std::size_t>(frames - 1) * hop + wl, 0.0);
  for (int l = 0; l < frames; ++l)
    for (int n = 0; n < wl; ++n) denom[static_cast<std::size_t>(l) * hop + n] += wa[n] * ws[n];
  return denom;
}
}  // namespace

std::vector<double> make_window(Window w, int length) {
  std::vector<double> win(length, 1.0);
  // Half-sample offset keeps the endpoints nonzero, so every sample of the
  // overlap-add denominator is strictly positive and reconstruction is exact
  // out to the signal edges.
  switch (w) {
    case Window::Rect:
      break;
    case Window::Hann:
      for (int n = 0; n < length; ++n) {
        double s = std::sin(kPi * (n + 0.5) / length);
        win[n] = s * s;
      }
      break;
    case Window::SqrtHann:
      for (int n = 0; n < length; ++n) win[n] = std::sin(kPi * (n + 0.5) / length);
      break;
  }
  return win;
}

ComplexSpectrogram stft(const Waveform& w, const StftConfig& c, int sample_rate) {
  c.validate();
  if (w.empty()) throw std::invalid_argument("stft: empty input");
  for (double s : w)
    if (!std::isfinite(s)) throw std::invalid_argument("stft: non-finite sample");

  const int frames = c.frames_for(w.size());
  const int bins = c.bins();
  ComplexSpectrogram S(bins, frames);
  S.sample_rate = sample_rate;
  S.config = c;

  std::vector<double> win = make_window(c.window, c.window_length);
  std::vector<double> buf(c.fft_length, 0.0);
  const std::size_t n = w.size();
  for (int l = 0; l < frames; ++l) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const std::size_t start = static_cast<std::size_t>(l) * c.hop_length;
    for (int i = 0; i < c.window_length; ++i) {
      std::size_t idx = start + i;
      if (idx < n) buf[i] = w[idx] * win[i];
    }
    rfft_into(buf.data(), c.fft_length, &S.v[static_cast<std::size_t>(l) * bins]);
  }
  return S;
}

Waveform istft(const ComplexSpectrogram& S, const StftConfig& c, std::size_t out_length) {
  c.validate();
  if (S.bins != c.bins())
    throw std::invalid_argument("istft: spectrogram bins do not match config");

  std::vector<double> win = make_window(c.window, c.window_length);
  std::vector<double> denom = ola_denominator(win, win, S.frames, c.hop_length);
  std::vector<double> acc(denom.size(), 0.0);
  std::vector<double> frame(c.fft_length);
  for (int l = 0; l < S.frames; ++l) {
    irfft_into(&S.v[static_cast<std::size_t>(l) * S.bins], c.fft_length, frame.data());
    const std::size_t start = static_cast<std::size_t>(l) * c.hop_length;
    for (int i = 0; i < c.window_length; ++i)
      acc[start + i] += frame[i] / c.fft_length * win[i];
  }

  Waveform out(out_length, 0.0);
  const std::size_t m = std::min(out_length, acc.size());
  for (std::size_t i = 0; i < m; ++i)
    out[i] = denom[i] > 1e-12 ? acc[i] / denom[i] : 0.0;
  return out;
}

ComplexSpectrogram istft_adjoint(const Waveform& grad_out, const StftConfig& c,
                                 int frames, std::size_t sig_length) {
  c.validate();
  std::vector<double> win = make_window(c.window, c.window_length);
  std::vector<double> denom = ola_denominator(win, win, frames, c.hop_length);

  std::vector<double> g(denom.size(), 0.0);
  const std::size_t m = std::min({grad_out.size(), sig_length, g.size()});
  for (std::size_t i = 0; i < m; ++i)
    g[i] = denom[i] > 1e-12 ? grad_out[i] / denom[i] : 0.0;

  const int bins = c.bins();
  ComplexSpectrogram G(bins, frames);
  G.config = c;
  std::vector<double> buf(c.fft_length, 0.0);
  std::vector<std::complex<double>> spec(bins);
  for (int l = 0; l < frames; ++l) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const std::size_t start = static_cast<std::size_t>(l) * c.hop_length;
    for (int i = 0; i < c.window_length; ++i) buf[i] = g[start + i] * win[i];
    rfft_into(buf.data(), c.fft_length, spec.data());
    for (int k = 0; k < bins; ++k) {
      double scale = (k == 0 || k == c.fft_length / 2) ? 1.0 : 2.0;
      std::complex<double> v = spec[k] * (scale / c.fft_length);
      if (k == 0 || k == c.fft_length / 2) v = {v.real(), 0.0};
      G(k, l) = v;
    }
  }
  return G;
}

ComplexSpectrogram apply_mask(const ComplexSpectrogram& Y, const ComplexRatioMask& M) {
  if (Y.bins != M.bins || Y.frames != M.frames)
    throw std::invalid_argument("apply_mask: shape mismatch");
  ComplexSpectrogram out = Y;
  for (std::size_t i = 0; i < Y.v.size(); ++i) {
    const double yr = Y.v[i].real(), yi = Y.v[i].imag();
    const double mr = M.v[i].real(), mi = M.v[i].imag();
    out.v[i] = {mr * yr - mi * yi, mr * yi + mi * yr};
  }
  return out;
}

ComplexRatioMask ideal_crm(const ComplexSpectrogram& Y, const ComplexSpectrogram& S, double eps) {
  if (!Y.same_shape(S)) throw std::invalid_argument("ideal_crm: shape mismatch");
  if (eps <= 0.0) throw std::invalid_argument("ideal_crm: eps must be > 0");
  ComplexRatioMask M(Y.bins, Y.frames);
  for (std::size_t i = 0; i < Y.v.size(); ++i) {
    const double yr = Y.v[i].real(), yi = Y.v[i].imag();
    const double sr = S.v[i].real(), si = S.v[i].imag();
    const double den = std::max(yr * yr + yi * yi, eps);
    M.v[i] = {(yr * sr + yi * si) / den, (yr * si - yi * sr) / den};
  }
  return M;
}

namespace {

/// Windowed-sinc taps for one output sample. Output m sits at input position
/// m * from / to; the fractional part cycles with period to / gcd(from, to),
/// so taps are precomputed per phase and shared by forward and adjoint.
struct ResampleKernel {
  long offset = 0;  // first input index relative to floor of the position
  std::vector<double> taps;
};

struct ResamplePlan {
  long step_num = 0;   // integer input advance per phase period
  int period = 1;      // number of distinct phases
  std::vector<ResampleKernel> phases;
};

ResamplePlan make_resample_plan(int from_hz, int to_hz) {
  const int g = std::gcd(from_hz, to_hz);
  const double ratio = static_cast<double>(from_hz) / to_hz;
  const int half_width = 48;
  const double cutoff = 0.5 * std::min(1.0, static_cast<double>(to_hz) / from_hz) * 0.95;

  ResamplePlan plan;
  plan.period = to_hz / g;
  plan.step_num = from_hz / g;
  plan.phases.resize(plan.period);
  for (int r = 0; r < plan.period; ++r) {
    const double center = r * ratio;
    const long j0 = static_cast<long>(std::ceil(center - half_width));
    const long j1 = static_cast<long>(std::floor(center + half_width));
    ResampleKernel& k = plan.phases[r];
    k.offset = j0;
    k.taps.resize(j1 - j0 + 1);
    double norm = 0.0;
    for (long j = j0; j <= j1; ++j) {
      const double t = j - center;
      const double s =
          (t == 0.0) ? 1.0 : std::sin(2.0 * kPi * cutoff * t) / (2.0 * kPi * cutoff * t);
      const double h = s * 0.5 * (1.0 + std::cos(kPi * t / half_width));
      k.taps[j - j0] = h;
      norm += h;
    }
    if (norm != 0.0)
      for (double& h : k.taps) h /= norm;
  }
  return plan;
}

}  // namespace

Waveform resample(const Waveform& w, int from_hz, int to_hz) {
  if (from_hz <= 0 || to_hz <= 0)
    throw std::invalid_argument("resample: rates must be positive");
  if (from_hz == to_hz) return w;
  if (w.empty()) return {};

  const ResamplePlan plan = make_resample_plan(from_hz, to_hz);
  const std::size_t out_n =
      static_cast<std::size_t>(std::llround(static_cast<double>(w.size()) * to_hz / from_hz));
  Waveform out(out_n, 0.0);
  const long n = static_cast<long>(w.size());
  for (std::size_t m = 0; m < out_n; ++m) {
    const long q = static_cast<long>(m) / plan.period;
    const ResampleKernel& k = plan.phases[m % plan.period];
    const long base = q * plan.step_num + k.offset;
    double acc = 0.0;
    const long lo = std::max<long>(0, -base);
    const long hi = std::min<long>(static_cast<long>(k.taps.size()) - 1, n - 1 - base);
    for (long i = lo; i <= hi; ++i) acc += w[base + i] * k.taps[i];
    out[m] = acc;
  }
  return out;
}

Waveform resample_adjoint(const Waveform& grad_out, int from_hz, int to_hz,
                          std::size_t in_length) {
  if (from_hz <= 0 || to_hz <= 0)
    throw std::invalid_argument("resample_adjoint: rates must be positive");
  if (from_hz == to_hz) {
    Waveform gx = grad_out;
    gx.resize(in_length, 0.0);
    return gx;
  }
  const ResamplePlan plan = make_resample_plan(from_hz, to_hz);
  Waveform gx(in_length, 0.0);
  const long n = static_cast<long>(in_length);
  for (std::size_t m = 0; m < grad_out.size(); ++m) {
    const long q = static_cast<long>(m) / plan.period;
    const ResampleKernel& k = plan.phases[m % plan.period];
    const long base = q * plan.step_num + k.offset;
    const double g = grad_out[m];
    const long lo = std::max<long>(0, -base);
    const long hi = std::min<long>(static_cast<long>(k.taps.size()) - 1, n - 1 - base);
    for (long i = lo; i <= hi; ++i) gx[base + i] += g * k.taps[i];
  }
  return gx;
}

}  // namespace bse
