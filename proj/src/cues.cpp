#include "bse/cues.hpp"

#include <algorithm>
#include <cmath>

namespace bse {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Matrix energy_db(const ComplexSpectrogram& S) {
  Matrix E(S.bins, S.frames);
  for (int l = 0; l < S.frames; ++l)
    for (int k = 0; k < S.bins; ++k) {
      const double p = std::max(std::norm(S(k, l)), kEnergyFloor);
      E(k, l) = 10.0 * std::log10(p);
    }
  return E;
}

BinaryMask ibm(const Matrix& energy, double threshold_db) {
  if (threshold_db <= 0.0) throw std::invalid_argument("ibm: threshold must be > 0");
  BinaryMask M(energy.rows, energy.cols);
  for (int k = 0; k < energy.rows; ++k) {
    double row_max = -1e300;
    for (int l = 0; l < energy.cols; ++l) row_max = std::max(row_max, energy(k, l));
    for (int l = 0; l < energy.cols; ++l)
      M(k, l) = energy(k, l) > row_max - threshold_db ? 1 : 0;
  }
  return M;
}

BinaryMask joint_ibm(const ComplexSpectrogram& left, const ComplexSpectrogram& right,
                     double threshold_db) {
  if (!left.same_shape(right)) throw std::invalid_argument("joint_ibm: shape mismatch");
  BinaryMask ml = ibm(energy_db(left), threshold_db);
  BinaryMask mr = ibm(energy_db(right), threshold_db);
  BinaryMask out(left.bins, left.frames);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = ml.v[i] & mr.v[i];
  return out;
}

CueMap ild_map(const ComplexSpectrogram& left, const ComplexSpectrogram& right) {
  if (!left.same_shape(right)) throw std::invalid_argument("ild_map: shape mismatch");
  CueMap out{Matrix(left.bins, left.frames), CueKind::IldDb};
  for (int l = 0; l < left.frames; ++l)
    for (int k = 0; k < left.bins; ++k) {
      const double ml = std::max(std::abs(left(k, l)), kIldMagFloor);
      const double mr = std::max(std::abs(right(k, l)), kIldMagFloor);
      out.values(k, l) = 20.0 * std::log10(ml / mr);
    }
  return out;
}

CueMap ipd_map(const ComplexSpectrogram& left, const ComplexSpectrogram& right) {
  if (!left.same_shape(right)) throw std::invalid_argument("ipd_map: shape mismatch");
  CueMap out{Matrix(left.bins, left.frames), CueKind::IpdRad};
  for (int l = 0; l < left.frames; ++l)
    for (int k = 0; k < left.bins; ++k) {
      const std::complex<double> z = left(k, l) * std::conj(right(k, l));
      // atan2(0, 0) = 0, so silent bins stay finite.
      double v = std::atan2(z.imag(), z.real());
      if (v == -kPi) v = kPi;  // principal value lives in (-pi, pi]
      out.values(k, l) = v;
    }
  return out;
}

double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

}  // namespace bse
