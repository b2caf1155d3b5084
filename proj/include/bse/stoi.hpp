#pragma once

#include "bse/autodiff.hpp"
#include "bse/types.hpp"

namespace bse {

enum class StoiMode { Eval, Smooth };

/// Intelligibility score in [0, 1] from clipped band-envelope correlation.
/// Eval mode: resample to 10 kHz, drop frames more than 40 dB below the
/// loudest clean frame, hard clip. Smooth mode: keep all frames, soft clip
/// via scaled tanh so the score is differentiable.
double stoi(const Waveform& clean, const Waveform& processed, int sample_rate,
            StoiMode mode = StoiMode::Eval);

namespace stoi_detail {

constexpr int kTargetRate = 10000;
constexpr int kFrameLen = 256;
constexpr int kHop = 128;
constexpr int kFft = 512;
constexpr int kBands = 15;
constexpr double kFirstCenter = 150.0;
constexpr int kSegFrames = 30;
constexpr double kClipDb = -15.0;
constexpr double kSilenceRangeDb = 40.0;

std::vector<double> analysis_window();  // kFrameLen-point Hann

/// (kBands, kFft/2+1) 0/1 membership of power bins in one-third-octave bands.
Matrix band_matrix();

/// One-third-octave band envelopes (kBands x frames) of a 10 kHz signal.
Matrix band_envelopes(const Waveform& x10k);

/// Drops frames more than kSilenceRangeDb below the loudest reference frame
/// and rebuilds both signals by overlap-add of the kept windowed frames.
void remove_silent_frames(const Waveform& ref, const Waveform& other,
                          Waveform& ref_out, Waveform& other_out);

}  // namespace stoi_detail

/// Differentiable smooth-mode score of `processed` (a flat (n) tensor at
/// `sample_rate`) against a fixed clean reference. Same value as
/// stoi(clean, processed, sample_rate, Smooth).
ad::Var stoi_score_graph(ad::Graph& g, ad::Var processed, const Waveform& clean,
                         int sample_rate);

}  // namespace bse
