#pragma once

#include "bse/autodiff.hpp"
#include "bse/stft.hpp"
#include "bse/types.hpp"

namespace bse {

struct LossWeights {
  double alpha = 1.0;   // signal-to-noise term
  double beta = 10.0;   // intelligibility term
  double gamma = 1.0;   // level-difference term
  double kappa = 10.0;  // phase-difference term
};

struct LossBreakdown {
  double snr_term = 0.0;   // -dB
  double stoi_term = 0.0;  // -score
  double ild_term = 0.0;   // dB
  double ipd_term = 0.0;   // radians
  double total = 0.0;
  bool empty_mask = false;  // no speech-active bins; spatial terms forced to 0
};

/// 10 log10(||s||^2 / ||s_hat - s||^2), capped to +-cap dB.
double snr(const Waveform& s, const Waveform& s_hat, double cap = 50.0);

/// -(SNR_L + SNR_R) / 2.
double snr_loss(const BinauralWaveform& clean, const BinauralWaveform& enhanced,
                double cap = 50.0);

/// -(smooth score_L + smooth score_R) / 2, in [-1, 0].
double stoi_loss(const BinauralWaveform& clean, const BinauralWaveform& enhanced);

/// Mean absolute level-difference error in dB over mask-active bins.
double ild_loss(const ComplexSpectrogram& clean_l, const ComplexSpectrogram& clean_r,
                const ComplexSpectrogram& enh_l, const ComplexSpectrogram& enh_r,
                const BinaryMask& mask, bool* empty_mask = nullptr);

/// Mean absolute phase-difference error wrapped to [0, pi] over active bins.
double ipd_loss(const ComplexSpectrogram& clean_l, const ComplexSpectrogram& clean_r,
                const ComplexSpectrogram& enh_l, const ComplexSpectrogram& enh_r,
                const BinaryMask& mask, bool* empty_mask = nullptr);

/// Full objective alpha*snr + beta*stoi + gamma*ild + kappa*ipd. Spatial
/// terms are masked by the clean-signal joint IBM at 20 dB.
LossBreakdown composite_loss(const BinauralWaveform& clean,
                             const BinauralWaveform& enhanced,
                             const LossWeights& w, const StftConfig& cfg);

/// Differentiable composite loss. spec_l/spec_r are (2, bins, frames) tensors
/// holding the enhanced spectrogram as stacked (re, im) planes, row-major
/// with time contiguous. Term values equal the scalar path on the
/// ISTFT-resynthesized waveforms.
struct LossTerms {
  ad::Var snr_term = nullptr;
  ad::Var stoi_term = nullptr;
  ad::Var ild_term = nullptr;
  ad::Var ipd_term = nullptr;
  ad::Var total = nullptr;
  bool empty_mask = false;
};

/// Capped SNR of the resynthesized spectrogram against a clean waveform.
ad::Var snr_graph(ad::Graph& g, ad::Var spec, const Waveform& clean,
                  const StftConfig& cfg, int sample_rate, double cap = 50.0);

/// Masked mean absolute level-difference error, differentiable in the
/// enhanced spectrogram pair. `inv_weights` holds mask/N.
ad::Var ild_term_graph(ad::Graph& g, ad::Var spec_l, ad::Var spec_r,
                       const ComplexSpectrogram& clean_l,
                       const ComplexSpectrogram& clean_r, const ad::Tensor& inv_weights);

/// Masked mean absolute wrapped phase-difference error.
ad::Var ipd_term_graph(ad::Graph& g, ad::Var spec_l, ad::Var spec_r,
                       const ComplexSpectrogram& clean_l,
                       const ComplexSpectrogram& clean_r, const ad::Tensor& inv_weights);

/// mask/N as a (bins, frames) weight tensor; all zero when the mask is empty.
ad::Tensor mask_weights(const BinaryMask& mask);

/// `only_weighted` replaces zero-weighted terms with constant 0 instead of
/// building their graphs; the total is unaffected.
LossTerms composite_loss_graph(ad::Graph& g, ad::Var spec_l, ad::Var spec_r,
                               const ComplexSpectrogram& clean_l,
                               const ComplexSpectrogram& clean_r,
                               const BinauralWaveform& clean,
                               const LossWeights& w, const StftConfig& cfg,
                               bool only_weighted = false);

/// Converts between the (2, bins, frames) tensor layout used by the model
/// and the column-major complex spectrogram.
ad::Tensor spec_to_tensor(const ComplexSpectrogram& s);
ComplexSpectrogram tensor_to_spec(const ad::Tensor& t, const StftConfig& cfg,
                                  int sample_rate);

}  // namespace bse
