#pragma once

#include <complex>
#include <vector>

#include "bse/types.hpp"

namespace bse {

enum class Window { SqrtHann, Hann, Rect };

struct StftConfig {
  int fft_length = 512;
  int window_length = 400;  // 25 ms at 16 kHz
  int hop_length = 100;     // 6.25 ms at 16 kHz
  Window window = Window::SqrtHann;

  void validate() const {
    if (hop_length <= 0 || window_length <= 0 || fft_length <= 0)
      throw std::invalid_argument("StftConfig: lengths must be positive");
    if (hop_length > window_length)
      throw std::invalid_argument("StftConfig: hop_length > window_length");
    if (window_length > fft_length)
      throw std::invalid_argument("StftConfig: window_length > fft_length");
  }
  int bins() const { return fft_length / 2 + 1; }
  /// Frame count used for a signal of n samples; frames start at l*hop.
  int frames_for(std::size_t n) const {
    return static_cast<int>(n / hop_length) + 1;
  }
};

/// One-sided complex spectrogram, bins x frames, frames are columns.
struct ComplexSpectrogram {
  std::vector<std::complex<double>> v;  // column-major: v[k + l*bins]
  int bins = 0;
  int frames = 0;
  int sample_rate = 16000;
  StftConfig config;

  ComplexSpectrogram() = default;
  ComplexSpectrogram(int k, int l) : v(static_cast<std::size_t>(k) * l), bins(k), frames(l) {}
  std::complex<double>& operator()(int k, int l) { return v[static_cast<std::size_t>(l) * bins + k]; }
  std::complex<double> operator()(int k, int l) const { return v[static_cast<std::size_t>(l) * bins + k]; }
  bool same_shape(const ComplexSpectrogram& o) const { return bins == o.bins && frames == o.frames; }
};

/// Complex-valued TF mask, same shape as the spectrogram it applies to.
struct ComplexRatioMask {
  std::vector<std::complex<double>> v;
  int bins = 0;
  int frames = 0;

  ComplexRatioMask() = default;
  ComplexRatioMask(int k, int l) : v(static_cast<std::size_t>(k) * l), bins(k), frames(l) {}
  std::complex<double>& operator()(int k, int l) { return v[static_cast<std::size_t>(l) * bins + k]; }
  std::complex<double> operator()(int k, int l) const { return v[static_cast<std::size_t>(l) * bins + k]; }
};

std::vector<double> make_window(Window w, int length);

ComplexSpectrogram stft(const Waveform& w, const StftConfig& c, int sample_rate = 16000);
Waveform istft(const ComplexSpectrogram& S, const StftConfig& c, std::size_t out_length);

/// Adjoint of the linear map S -> istft(S, c, out_length); used by the
/// differentiable loss path. grad layout matches ComplexSpectrogram.
ComplexSpectrogram istft_adjoint(const Waveform& grad_out, const StftConfig& c,
                                 int frames, std::size_t sig_length);

ComplexSpectrogram apply_mask(const ComplexSpectrogram& Y, const ComplexRatioMask& M);
ComplexRatioMask ideal_crm(const ComplexSpectrogram& Y, const ComplexSpectrogram& S,
                           double eps = 1e-8);

Waveform resample(const Waveform& w, int from_hz, int to_hz);

/// Adjoint of the linear map w -> resample(w, from, to) for a fixed input
/// length; used by the differentiable loss path.
Waveform resample_adjoint(const Waveform& grad_out, int from_hz, int to_hz,
                          std::size_t in_length);

}  // namespace bse
