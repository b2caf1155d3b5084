#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace bse {

using Waveform = std::vector<double>;

/// Two time-aligned ear channels at a common sample rate.
struct BinauralWaveform {
  Waveform left;
  Waveform right;
  int sample_rate = 16000;

  void validate() const {
    if (left.size() != right.size())
      throw std::invalid_argument("BinauralWaveform: channel length mismatch");
    if (sample_rate <= 0)
      throw std::invalid_argument("BinauralWaveform: sample_rate must be > 0");
    for (double v : left)
      if (!std::isfinite(v)) throw std::invalid_argument("BinauralWaveform: non-finite sample");
    for (double v : right)
      if (!std::isfinite(v)) throw std::invalid_argument("BinauralWaveform: non-finite sample");
  }
  std::size_t length() const { return left.size(); }
};

/// Dense real matrix, row-major, columns are time frames.
struct Matrix {
  std::vector<double> v;
  int rows = 0;
  int cols = 0;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : v(static_cast<std::size_t>(r) * c, fill), rows(r), cols(c) {}
  double& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

/// {0,1} speech-activity mask over (frequency bin, time frame).
struct BinaryMask {
  std::vector<std::uint8_t> v;
  int rows = 0;
  int cols = 0;

  BinaryMask() = default;
  BinaryMask(int r, int c) : v(static_cast<std::size_t>(r) * c, 0), rows(r), cols(c) {}
  std::uint8_t& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  std::uint8_t operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : v) n += b;
    return n;
  }
};

}  // namespace bse
