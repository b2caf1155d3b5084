#pragma once

#include <string>

#include "bse/types.hpp"

namespace bse {

/// 16-bit PCM and 32-bit float WAV, mono or stereo.
/// Stereo maps channel 0 -> left, channel 1 -> right.

struct WavData {
  std::vector<Waveform> channels;
  int sample_rate = 16000;
};

WavData read_wav(const std::string& path);
Waveform read_wav_mono(const std::string& path, int* sample_rate = nullptr);
BinauralWaveform read_wav_stereo(const std::string& path);

enum class WavFormat { Pcm16, Float32 };

void write_wav(const std::string& path, const std::vector<const Waveform*>& channels,
               int sample_rate, WavFormat fmt = WavFormat::Float32);
void write_wav_mono(const std::string& path, const Waveform& w, int sample_rate,
                    WavFormat fmt = WavFormat::Float32);
void write_wav_stereo(const std::string& path, const BinauralWaveform& w,
                      WavFormat fmt = WavFormat::Float32);

}  // namespace bse
