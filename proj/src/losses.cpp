#include "bse/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bse/cues.hpp"
#include "bse/stoi.hpp"

namespace bse {

namespace {
constexpr double kLn10 = 2.30258509299404568;
constexpr double kPowerFloor = 1e-300;  // keeps log finite; the 50 dB cap binds first

double masked_mean_abs(const Matrix& clean_cue, const Matrix& enh_cue,
                       const BinaryMask& mask, bool wrap) {
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.v.size(); ++i) {
    if (!mask.v[i]) continue;
    const double d = clean_cue.v[i] - enh_cue.v[i];
    acc += wrap ? std::abs(wrap_angle(d)) : std::abs(d);
    ++n;
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

void check_pair(const ComplexSpectrogram& a, const ComplexSpectrogram& b,
                const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

}  // namespace

double snr(const Waveform& s, const Waveform& s_hat, double cap) {
  if (s.size() != s_hat.size()) throw std::invalid_argument("snr: length mismatch");
  double ps = 0.0, pe = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    ps += s[i] * s[i];
    const double e = s_hat[i] - s[i];
    pe += e * e;
  }
  if (ps <= 0.0) throw std::invalid_argument("snr: silent reference");
  const double v = 10.0 * std::log10(ps / std::max(pe, kPowerFloor));
  return std::clamp(v, -cap, cap);
}

double snr_loss(const BinauralWaveform& clean, const BinauralWaveform& enhanced,
                double cap) {
  return -0.5 * (snr(clean.left, enhanced.left, cap) + snr(clean.right, enhanced.right, cap));
}

double stoi_loss(const BinauralWaveform& clean, const BinauralWaveform& enhanced) {
  const double dl = stoi(clean.left, enhanced.left, clean.sample_rate, StoiMode::Smooth);
  const double dr = stoi(clean.right, enhanced.right, clean.sample_rate, StoiMode::Smooth);
  return -0.5 * (dl + dr);
}

double ild_loss(const ComplexSpectrogram& clean_l, const ComplexSpectrogram& clean_r,
                const ComplexSpectrogram& enh_l, const ComplexSpectrogram& enh_r,
                const BinaryMask& mask, bool* empty_mask) {
  check_pair(clean_l, clean_r, "ild_loss");
  check_pair(clean_l, enh_l, "ild_loss");
  check_pair(clean_l, enh_r, "ild_loss");
  if (mask.v.size() != clean_l.v.size())
    throw std::invalid_argument("ild_loss: mask shape mismatch");
  if (empty_mask) *empty_mask = mask.count() == 0;
  return masked_mean_abs(ild_map(clean_l, clean_r).values,
                         ild_map(enh_l, enh_r).values, mask, false);
}

double ipd_loss(const ComplexSpectrogram& clean_l, const ComplexSpectrogram& clean_r,
                const ComplexSpectrogram& enh_l, const ComplexSpectrogram& enh_r,
                const BinaryMask& mask, bool* empty_mask) {
  check_pair(clean_l, clean_r, "ipd_loss");
  check_pair(clean_l, enh_l, "ipd_loss");
  check_pair(clean_l, enh_r, "ipd_loss");
  if (mask.v.size() != clean_l.v.size())
    throw std::invalid_argument("ipd_loss: mask shape mismatch");
  if (empty_mask) *empty_mask = mask.count() == 0;
  return masked_mean_abs(ipd_map(clean_l, clean_r).values,
                         ipd_map(enh_l, enh_r).values, mask, true);
}

LossBreakdown composite_loss(const BinauralWaveform& clean,
                             const BinauralWaveform& enhanced,
                             const LossWeights& w, const StftConfig& cfg) {
  clean.validate();
  enhanced.validate();
  if (clean.length() != enhanced.length())
    throw std::invalid_argument("composite_loss: length mismatch");

  LossBreakdown out;
  out.snr_term = snr_loss(clean, enhanced);
  out.stoi_term = stoi_loss(clean, enhanced);

  const auto cl = stft(clean.left, cfg, clean.sample_rate);
  const auto cr = stft(clean.right, cfg, clean.sample_rate);
  const auto el = stft(enhanced.left, cfg, clean.sample_rate);
  const auto er = stft(enhanced.right, cfg, clean.sample_rate);
  const BinaryMask mask = joint_ibm(cl, cr, 20.0);
  out.ild_term = ild_loss(cl, cr, el, er, mask, &out.empty_mask);
  out.ipd_term = ipd_loss(cl, cr, el, er, mask);
  out.total = w.alpha * out.snr_term + w.beta * out.stoi_term +
              w.gamma * out.ild_term + w.kappa * out.ipd_term;
  return out;
}

ad::Tensor spec_to_tensor(const ComplexSpectrogram& s) {
  ad::Tensor t({2, s.bins, s.frames});
  const std::size_t plane = static_cast<std::size_t>(s.bins) * s.frames;
  for (int k = 0; k < s.bins; ++k)
    for (int l = 0; l < s.frames; ++l) {
      const std::size_t i = static_cast<std::size_t>(k) * s.frames + l;
      t.v[i] = s(k, l).real();
      t.v[plane + i] = s(k, l).imag();
    }
  return t;
}

ComplexSpectrogram tensor_to_spec(const ad::Tensor& t, const StftConfig& cfg,
                                  int sample_rate) {
  if (t.shape.size() != 3 || t.shape[0] != 2)
    throw std::invalid_argument("tensor_to_spec: expect (2, bins, frames)");
  ComplexSpectrogram s(t.shape[1], t.shape[2]);
  s.sample_rate = sample_rate;
  s.config = cfg;
  const std::size_t plane = static_cast<std::size_t>(s.bins) * s.frames;
  for (int k = 0; k < s.bins; ++k)
    for (int l = 0; l < s.frames; ++l) {
      const std::size_t i = static_cast<std::size_t>(k) * s.frames + l;
      s(k, l) = {t.v[i], t.v[plane + i]};
    }
  return s;
}

namespace {

/// ISTFT resynthesis as a fixed linear map on the (2, bins, frames) layout.
ad::Var istft_var(ad::Graph& g, ad::Var spec, const StftConfig& cfg,
                  int sample_rate, std::size_t out_length) {
  const int frames = spec->val.shape[2];
  return ad::linear_map(
      g, spec,
      [cfg, sample_rate, out_length](const ad::Tensor& t) {
        Waveform w = istft(tensor_to_spec(t, cfg, sample_rate), cfg, out_length);
        const int n = static_cast<int>(w.size());
        return ad::Tensor::from(std::move(w), {n});
      },
      [cfg, frames, out_length](const ad::Tensor& gy) {
        ComplexSpectrogram gs = istft_adjoint(gy.v, cfg, frames, out_length);
        return spec_to_tensor(gs);
      });
}

/// Capped SNR of a resynthesized ear against a fixed clean waveform.
ad::Var snr_var(ad::Graph& g, ad::Var s_hat, const Waveform& s, double cap) {
  double ps = 0.0;
  for (double x : s) ps += x * x;
  if (ps <= 0.0) throw std::invalid_argument("snr: silent reference");
  auto clean = g.constant(ad::Tensor::from(s, {static_cast<int>(s.size())}));
  auto pe = ad::sum(g, ad::square(g, ad::sub(g, s_hat, clean)));
  auto v = ad::add_scalar(g, ad::scale(g, ad::log_floor(g, pe, kPowerFloor), -10.0 / kLn10),
                          10.0 * std::log10(ps));
  return ad::clamp(g, v, -cap, cap);
}

}  // namespace

ad::Var snr_graph(ad::Graph& g, ad::Var spec, const Waveform& clean,
                  const StftConfig& cfg, int sample_rate, double cap) {
  return snr_var(g, istft_var(g, spec, cfg, sample_rate, clean.size()), clean, cap);
}

ad::Tensor mask_weights(const BinaryMask& mask) {
  ad::Tensor w({mask.rows, mask.cols});
  const std::size_t active = mask.count();
  if (active == 0) return w;
  for (std::size_t i = 0; i < mask.v.size(); ++i)
    w.v[i] = mask.v[i] ? 1.0 / static_cast<double>(active) : 0.0;
  return w;
}

namespace {

struct SpecPlanes {
  ad::Var re, im;
};

SpecPlanes planes(ad::Graph& g, ad::Var spec) {
  const int K = spec->val.shape[1], L = spec->val.shape[2];
  return {ad::reshape(g, ad::slice0(g, spec, 0, 1), {K, L}),
          ad::reshape(g, ad::slice0(g, spec, 1, 1), {K, L})};
}

}  // namespace

ad::Var ild_term_graph(ad::Graph& g, ad::Var spec_l, ad::Var spec_r,
                       const ComplexSpectrogram& clean_l,
                       const ComplexSpectrogram& clean_r, const ad::Tensor& inv_weights) {
  const int K = spec_l->val.shape[1], L = spec_l->val.shape[2];
  auto [re_l, im_l] = planes(g, spec_l);
  auto [re_r, im_r] = planes(g, spec_r);
  auto pow_l = ad::add(g, ad::square(g, re_l), ad::square(g, im_l));
  auto pow_r = ad::add(g, ad::square(g, re_r), ad::square(g, im_r));
  const double eps2 = kIldMagFloor * kIldMagFloor;
  auto ild_enh = ad::scale(
      g, ad::sub(g, ad::log_floor(g, pow_l, eps2), ad::log_floor(g, pow_r, eps2)),
      10.0 / kLn10);
  const Matrix ild_ref = ild_map(clean_l, clean_r).values;
  auto ild_c = g.constant(ad::Tensor::from(ild_ref.v, {K, L}));
  return ad::weighted_sum(g, ad::abs_val(g, ad::sub(g, ild_enh, ild_c)), inv_weights);
}

ad::Var ipd_term_graph(ad::Graph& g, ad::Var spec_l, ad::Var spec_r,
                       const ComplexSpectrogram& clean_l,
                       const ComplexSpectrogram& clean_r, const ad::Tensor& inv_weights) {
  const int K = spec_l->val.shape[1], L = spec_l->val.shape[2];
  auto [re_l, im_l] = planes(g, spec_l);
  auto [re_r, im_r] = planes(g, spec_r);
  auto cross_re = ad::add(g, ad::mul(g, re_l, re_r), ad::mul(g, im_l, im_r));
  auto cross_im = ad::sub(g, ad::mul(g, im_l, re_r), ad::mul(g, re_l, im_r));
  auto ipd_enh = ad::atan2_op(g, cross_im, cross_re);
  const Matrix ipd_ref = ipd_map(clean_l, clean_r).values;
  auto ipd_c = g.constant(ad::Tensor::from(ipd_ref.v, {K, L}));
  return ad::weighted_sum(g, ad::wrapped_abs(g, ad::sub(g, ipd_enh, ipd_c)), inv_weights);
}

LossTerms composite_loss_graph(ad::Graph& g, ad::Var spec_l, ad::Var spec_r,
                               const ComplexSpectrogram& clean_l,
                               const ComplexSpectrogram& clean_r,
                               const BinauralWaveform& clean,
                               const LossWeights& w, const StftConfig& cfg,
                               bool only_weighted) {
  const int K = cfg.bins();
  if (spec_l->val.shape != std::vector<int>({2, K, clean_l.frames}) ||
      spec_r->val.shape != std::vector<int>({2, K, clean_r.frames}))
    throw std::invalid_argument("composite_loss_graph: spectrogram shape mismatch");
  check_pair(clean_l, clean_r, "composite_loss_graph");
  const std::size_t n = clean.length();

  LossTerms out;
  const auto zero = [&]() { return g.constant(ad::Tensor::scalar(0.0)); };
  const bool want_snr = !only_weighted || w.alpha != 0.0;
  const bool want_stoi = !only_weighted || w.beta != 0.0;
  const bool want_ild = !only_weighted || w.gamma != 0.0;
  const bool want_ipd = !only_weighted || w.kappa != 0.0;

  // Time-domain terms through the ISTFT.
  ad::Var sl = nullptr, sr = nullptr;
  if (want_snr || want_stoi) {
    sl = istft_var(g, spec_l, cfg, clean.sample_rate, n);
    sr = istft_var(g, spec_r, cfg, clean.sample_rate, n);
  }
  out.snr_term =
      want_snr
          ? ad::scale(g,
                      ad::add(g, snr_var(g, sl, clean.left, 50.0),
                              snr_var(g, sr, clean.right, 50.0)),
                      -0.5)
          : zero();
  out.stoi_term =
      want_stoi
          ? ad::scale(g,
                      ad::add(g, stoi_score_graph(g, sl, clean.left, clean.sample_rate),
                              stoi_score_graph(g, sr, clean.right, clean.sample_rate)),
                      -0.5)
          : zero();

  // Spatial terms on TF bins, masked by the clean-signal joint IBM.
  const BinaryMask mask = joint_ibm(clean_l, clean_r, 20.0);
  const std::size_t active = mask.count();
  out.empty_mask = active == 0;
  if (out.empty_mask || !(want_ild || want_ipd)) {
    out.ild_term = zero();
    out.ipd_term = zero();
  } else {
    const ad::Tensor mw = mask_weights(mask);
    out.ild_term =
        want_ild ? ild_term_graph(g, spec_l, spec_r, clean_l, clean_r, mw) : zero();
    out.ipd_term =
        want_ipd ? ipd_term_graph(g, spec_l, spec_r, clean_l, clean_r, mw) : zero();
  }

  auto total = ad::scale(g, out.snr_term, w.alpha);
  total = ad::add(g, total, ad::scale(g, out.stoi_term, w.beta));
  total = ad::add(g, total, ad::scale(g, out.ild_term, w.gamma));
  total = ad::add(g, total, ad::scale(g, out.ipd_term, w.kappa));
  out.total = total;
  return out;
}

}  // namespace bse
