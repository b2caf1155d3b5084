#pragma once

#include "bse/stft.hpp"
#include "bse/types.hpp"

namespace bse {

enum class CueKind { IldDb, IpdRad };

/// Real-valued interaural cue map over (bin, frame).
struct CueMap {
  Matrix values;
  CueKind kind;
};

constexpr double kIldMagFloor = 1e-6;    // magnitude floor before the level ratio
constexpr double kEnergyFloor = 1e-12;   // |S|^2 floor before the dB energy

/// E(k,l) = 10 log10 |S(k,l)|^2, floored at kEnergyFloor.
Matrix energy_db(const ComplexSpectrogram& S);

/// Speech-activity mask: 1 iff E(k,l) > max_l E(k,l) - threshold, per frequency row.
BinaryMask ibm(const Matrix& energy, double threshold_db = 20.0);

/// Elementwise AND of the per-ear masks.
BinaryMask joint_ibm(const ComplexSpectrogram& left, const ComplexSpectrogram& right,
                     double threshold_db = 20.0);

/// 20 log10(|S_L| / |S_R|), magnitudes floored at kIldMagFloor.
CueMap ild_map(const ComplexSpectrogram& left, const ComplexSpectrogram& right);

/// Principal argument of S_L * conj(S_R), in (-pi, pi].
CueMap ipd_map(const ComplexSpectrogram& left, const ComplexSpectrogram& right);

/// Wrap an angle difference into (-pi, pi].
double wrap_angle(double a);

}  // namespace bse
