#include "bse/stoi.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bse/fft.hpp"
#include "bse/stft.hpp"

namespace bse {

namespace stoi_detail {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr int kBins = kFft / 2 + 1;

int frame_count(std::size_t n) {
  if (n < static_cast<std::size_t>(kFrameLen)) return 0;
  return static_cast<int>((n - kFrameLen) / kHop) + 1;
}
}  // namespace

std::vector<double> analysis_window() {
  std::vector<double> w(kFrameLen);
  for (int n = 0; n < kFrameLen; ++n)
    w[n] = 0.5 * (1.0 - std::cos(2.0 * kPi * (n + 1) / (kFrameLen + 1)));
  return w;
}

Matrix band_matrix() {
  Matrix B(kBands, kBins);
  for (int b = 0; b < kBands; ++b) {
    const double cf = kFirstCenter * std::pow(2.0, b / 3.0);
    const double lo = cf / std::pow(2.0, 1.0 / 6.0);
    const double hi = cf * std::pow(2.0, 1.0 / 6.0);
    for (int i = 0; i < kBins; ++i) {
      const double f = static_cast<double>(i) * kTargetRate / kFft;
      if (f >= lo && f < hi) B(b, i) = 1.0;
    }
  }
  return B;
}

Matrix band_envelopes(const Waveform& x10k) {
  const int M = frame_count(x10k.size());
  if (M < 1) throw std::invalid_argument("stoi: signal shorter than one frame");
  static const std::vector<double> win = analysis_window();
  static const Matrix B = band_matrix();

  Matrix env(kBands, M);
  std::vector<double> frame(kFft, 0.0);
  std::vector<std::complex<double>> spec(kBins);
  for (int m = 0; m < M; ++m) {
    for (int n = 0; n < kFrameLen; ++n) frame[n] = win[n] * x10k[m * kHop + n];
    rfft_into(frame.data(), kFft, spec.data());
    for (int b = 0; b < kBands; ++b) {
      double acc = 0.0;
      for (int i = 0; i < kBins; ++i)
        if (B(b, i) != 0.0) acc += std::norm(spec[i]);
      env(b, m) = std::sqrt(acc);
    }
  }
  return env;
}

void remove_silent_frames(const Waveform& ref, const Waveform& other,
                          Waveform& ref_out, Waveform& other_out) {
  const int M = frame_count(ref.size());
  static const std::vector<double> win = analysis_window();
  std::vector<double> energy_db(M, -1e300);
  double peak = -1e300;
  for (int m = 0; m < M; ++m) {
    double e = 0.0;
    for (int n = 0; n < kFrameLen; ++n) {
      const double s = win[n] * ref[m * kHop + n];
      e += s * s;
    }
    energy_db[m] = 10.0 * std::log10(std::max(e, 1e-300));
    peak = std::max(peak, energy_db[m]);
  }
  std::vector<int> keep;
  for (int m = 0; m < M; ++m)
    if (energy_db[m] > peak - kSilenceRangeDb) keep.push_back(m);

  const std::size_t out_len =
      keep.empty() ? 0 : (keep.size() - 1) * kHop + kFrameLen;
  ref_out.assign(out_len, 0.0);
  other_out.assign(out_len, 0.0);
  Waveform norm(out_len, 0.0);
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const int m = keep[j];
    for (int n = 0; n < kFrameLen; ++n) {
      const std::size_t o = j * kHop + n;
      ref_out[o] += win[n] * ref[m * kHop + n];
      other_out[o] += win[n] * other[m * kHop + n];
      norm[o] += win[n];
    }
  }
  for (std::size_t i = 0; i < out_len; ++i) {
    if (norm[i] > 1e-12) {
      ref_out[i] /= norm[i];
      other_out[i] /= norm[i];
    }
  }
}

}  // namespace stoi_detail

double stoi(const Waveform& clean, const Waveform& processed, int sample_rate,
            StoiMode mode) {
  using namespace stoi_detail;
  if (clean.size() != processed.size())
    throw std::invalid_argument("stoi: length mismatch");
  Waveform c = resample(clean, sample_rate, kTargetRate);
  Waveform p = resample(processed, sample_rate, kTargetRate);
  if (mode == StoiMode::Eval) {
    Waveform c2, p2;
    remove_silent_frames(c, p, c2, p2);
    c.swap(c2);
    p.swap(p2);
    if (c.size() < static_cast<std::size_t>((kSegFrames - 1) * kHop + kFrameLen))
      throw std::invalid_argument("stoi: signal too short after silence removal");
  }
  Matrix ce = band_envelopes(c);
  Matrix pe = band_envelopes(p);

  ad::Graph g;
  auto clean_t = ad::Tensor::from(ce.v, {kBands, ce.cols});
  auto proc_t = g.leaf(ad::Tensor::from(pe.v, {kBands, pe.cols}), false);
  auto d = ad::band_correlation(g, proc_t, clean_t, kSegFrames, kClipDb,
                                mode == StoiMode::Smooth);
  return d->val.item();
}

ad::Var stoi_score_graph(ad::Graph& g, ad::Var processed, const Waveform& clean,
                         int sample_rate) {
  using namespace stoi_detail;
  if (processed->val.numel() != clean.size())
    throw std::invalid_argument("stoi_score_graph: length mismatch");
  const std::size_t n = clean.size();

  // Resample as a fixed linear map with its exact adjoint.
  auto p10k = ad::linear_map(
      g, processed,
      [n, sample_rate](const ad::Tensor& x) {
        Waveform out = resample(Waveform(x.v), sample_rate, kTargetRate);
        const int on = static_cast<int>(out.size());
        return ad::Tensor::from(std::move(out), {on});
      },
      [n, sample_rate](const ad::Tensor& gy) {
        Waveform gx = resample_adjoint(gy.v, sample_rate, kTargetRate, n);
        return ad::Tensor::from(std::move(gx), {static_cast<int>(n)});
      });

  const int M = [&] {
    const std::size_t n10 = p10k->val.numel();
    if (n10 < static_cast<std::size_t>(kFrameLen))
      throw std::invalid_argument("stoi_score_graph: signal shorter than one frame");
    return static_cast<int>((n10 - kFrameLen) / kHop) + 1;
  }();
  constexpr int kBins = kFft / 2 + 1;
  const std::size_t n10 = p10k->val.numel();

  // Windowed frame DFTs as one linear map producing stacked (re, im) rows,
  // shape (2, kBins, M) with time contiguous.
  static const std::vector<double> win = analysis_window();
  auto spec = ad::linear_map(
      g, p10k,
      [M](const ad::Tensor& x) {
        ad::Tensor out({2, kBins, M});
        std::vector<double> frame(kFft, 0.0);
        std::vector<std::complex<double>> s(kBins);
        for (int m = 0; m < M; ++m) {
          for (int i = 0; i < kFrameLen; ++i) frame[i] = win[i] * x.v[m * kHop + i];
          rfft_into(frame.data(), kFft, s.data());
          for (int k = 0; k < kBins; ++k) {
            out.v[static_cast<std::size_t>(k) * M + m] = s[k].real();
            out.v[(static_cast<std::size_t>(kBins + k)) * M + m] = s[k].imag();
          }
        }
        return out;
      },
      [M, n10](const ad::Tensor& gy) {
        // Adjoint of the one-sided DFT: irfft of the half-weighted spectrum.
        ad::Tensor gx({static_cast<int>(n10)});
        std::vector<std::complex<double>> s(kBins);
        std::vector<double> frame(kFft);
        for (int m = 0; m < M; ++m) {
          for (int k = 0; k < kBins; ++k) {
            std::complex<double> c(gy.v[static_cast<std::size_t>(k) * M + m],
                                   gy.v[(static_cast<std::size_t>(kBins + k)) * M + m]);
            s[k] = (k == 0 || k == kBins - 1) ? c : 0.5 * c;
          }
          irfft_into(s.data(), kFft, frame.data());
          for (int i = 0; i < kFrameLen; ++i) gx.v[m * kHop + i] += win[i] * frame[i];
        }
        return gx;
      });

  auto re = ad::reshape(g, ad::slice0(g, spec, 0, 1), {kBins, M});
  auto im = ad::reshape(g, ad::slice0(g, spec, 1, 1), {kBins, M});
  auto power = ad::add(g, ad::square(g, re), ad::square(g, im));

  static const Matrix B = band_matrix();
  auto bands = g.constant(ad::Tensor::from(B.v, {kBands, kBins}));
  auto env = ad::sqrt_floor(g, ad::matmul(g, bands, power), 1e-24);

  Matrix ce = band_envelopes(resample(clean, sample_rate, kTargetRate));
  auto clean_t = ad::Tensor::from(ce.v, {kBands, ce.cols});
  return ad::band_correlation(g, env, clean_t, kSegFrames, kClipDb, true);
}

}  // namespace bse
