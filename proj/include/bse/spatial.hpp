#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bse/types.hpp"

namespace bse {

/// Spherical-head parameters for the synthetic HRIR generator.
struct HeadModelConfig {
  double head_radius = 0.0875;    // meters
  double speed_of_sound = 343.0;  // m/s
  double shadow_cutoff = 6000.0;  // Hz, base cutoff of the contralateral low-pass

  void validate() const {
    if (head_radius <= 0 || speed_of_sound <= 0 || shadow_cutoff <= 0)
      throw std::invalid_argument("HeadModelConfig: all fields must be positive");
  }
};

struct HrirPair {
  Waveform left;
  Waveform right;
};

/// Impulse-response pairs on an azimuth grid. Azimuths in degrees,
/// counterclockwise, 0 = front, 90 = left ear side.
struct HrirSet {
  std::vector<double> azimuths;  // ascending, [0, 360)
  std::vector<HrirPair> pairs;
  int sample_rate = 16000;

  const HrirPair& nearest(double azimuth_deg) const;
  bool covers_full_circle(double max_step_deg = 5.0) const;
};

/// Woodworth interaural time difference for a bearing (radians from the
/// median plane, in [0, pi/2]).
double woodworth_itd(double bearing_rad, const HeadModelConfig& cfg);

/// Fractional-delay spherical-head impulse response pair for one azimuth.
HrirPair synth_hrir(double azimuth_deg, const HeadModelConfig& cfg, int sample_rate);

/// Full-circle synthetic set on a uniform grid (step must divide 5 degrees).
HrirSet make_synthetic_hrirs(const HeadModelConfig& cfg, int sample_rate,
                             double step_deg = 5.0);

/// Load measured impulse responses from a directory of WAV pairs plus a JSON
/// index ({"sample_rate": .., "azimuths": {"85": {"left": "az085_L.wav", ...}}}).
HrirSet load_hrir_dir(const std::string& dir);

BinauralWaveform spatialize(const Waveform& mono, double azimuth_deg, const HrirSet& hrirs,
                            int sample_rate);

enum class NoiseType { Wgn, Ssn, External };

NoiseType noise_type_from_string(const std::string& s);
std::string to_string(NoiseType t);

/// Average long-term magnitude spectrum (one-sided, fft 512) of a reference
/// set, for shaping speech-shaped noise.
std::vector<double> average_spectrum(const std::vector<const Waveform*>& reference,
                                     int fft_length = 512);

/// Linear-phase FIR whose magnitude response matches `spectrum` (one-sided).
Waveform fir_from_spectrum(const std::vector<double>& spectrum, int fft_length = 512);

/// White noise filtered to the average long-term spectrum of the references.
Waveform speech_shaped_noise(const std::vector<const Waveform*>& reference,
                             double duration_s, int sample_rate, std::uint64_t seed);

/// Diffuse field from mutually uncorrelated sources on the full azimuth ring.
/// `ssn_fir` supplies the shaping filter when noise_type == Ssn.
BinauralWaveform isotropic_noise(double duration_s, NoiseType noise_type, const HrirSet& hrirs,
                                 std::uint64_t seed, const Waveform* ssn_fir = nullptr);

struct MixResult {
  BinauralWaveform noisy;
  double snr_left_db = 0.0;
  double snr_right_db = 0.0;
  double noise_scale = 1.0;
};

/// Scale the noise so that (SNR_L + SNR_R)/2 hits the target; speech unscaled.
MixResult mix_at_snr(const BinauralWaveform& speech, const BinauralWaveform& noise,
                     double target_avg_snr_db);

Waveform convolve(const Waveform& x, const Waveform& h);

}  // namespace bse
