#pragma once

#include <cstdint>

#include "bse/types.hpp"

namespace bse {

/// Synthetic speech-like utterance: glottal-pulse harmonics shaped by a few
/// moving formant resonances, a syllabic amplitude envelope and unvoiced
/// noise bursts. Deterministic in (seed).
Waveform synth_utterance(double seconds, int sample_rate, std::uint64_t seed);

}  // namespace bse
