#include "bse/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "bse/fft.hpp"
#include "bse/rng.hpp"
#include "bse/wav.hpp"

namespace bse {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr int kSincHalfTaps = 16;  // 32-tap windowed-sinc fractional delay
constexpr int kBulkDelay = 32;     // taps of lead-in so negative offsets fit
constexpr int kIrLength = 256;

double wrap_deg(double a) {
  double r = std::fmod(a, 360.0);
  if (r < 0) r += 360.0;
  return r;
}

/// Windowed-sinc tap at fractional position offset from an impulse at `delay`.
void add_fractional_impulse(Waveform& ir, double delay, double gain) {
  const int c = static_cast<int>(std::floor(delay));
  for (int j = c - kSincHalfTaps + 1; j <= c + kSincHalfTaps; ++j) {
    if (j < 0 || j >= static_cast<int>(ir.size())) continue;
    const double t = j - delay;
    const double s = t == 0.0 ? 1.0 : std::sin(kPi * t) / (kPi * t);
    const double w = 0.5 * (1.0 + std::cos(kPi * t / kSincHalfTaps));
    ir[j] += gain * s * w;
  }
}

/// One-pole low pass, unity DC gain, applied in place.
void one_pole_lowpass(Waveform& x, double cutoff_hz, int sample_rate) {
  const double a = std::exp(-2.0 * kPi * cutoff_hz / sample_rate);
  double y = 0.0;
  for (double& v : x) {
    y = (1.0 - a) * v + a * y;
    v = y;
  }
}

double power(const Waveform& w) {
  double p = 0.0;
  for (double v : w) p += v * v;
  return p;
}

}  // namespace

const HrirPair& HrirSet::nearest(double azimuth_deg) const {
  if (azimuths.empty()) throw std::invalid_argument("HrirSet: empty");
  const double az = wrap_deg(azimuth_deg);
  std::size_t best = 0;
  double best_d = 1e300;
  for (std::size_t i = 0; i < azimuths.size(); ++i) {
    double d = std::abs(az - azimuths[i]);
    d = std::min(d, 360.0 - d);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return pairs[best];
}

bool HrirSet::covers_full_circle(double max_step_deg) const {
  if (azimuths.size() < static_cast<std::size_t>(360.0 / max_step_deg)) return false;
  for (double a = 0.0; a < 360.0; a += max_step_deg) {
    bool found = false;
    for (double b : azimuths) {
      double d = std::abs(a - b);
      d = std::min(d, 360.0 - d);
      if (d < max_step_deg / 2 + 1e-9) found = true;
    }
    if (!found) return false;
  }
  return true;
}

double woodworth_itd(double bearing_rad, const HeadModelConfig& cfg) {
  cfg.validate();
  const double b = std::abs(bearing_rad);
  return cfg.head_radius / cfg.speed_of_sound * (b + std::sin(b));
}

HrirPair synth_hrir(double azimuth_deg, const HeadModelConfig& cfg, int sample_rate) {
  cfg.validate();
  if (sample_rate <= 0) throw std::invalid_argument("synth_hrir: sample_rate must be > 0");
  const double az = wrap_deg(azimuth_deg) * kPi / 180.0;
  // Bearing from the median plane; positive means the source is on the left.
  const double sin_b = std::sin(az);
  const double bearing = std::asin(std::clamp(sin_b, -1.0, 1.0));
  const double itd = woodworth_itd(bearing, cfg);

  HrirPair p{Waveform(kIrLength, 0.0), Waveform(kIrLength, 0.0)};
  const double half = 0.5 * itd * sample_rate;
  const double delay_left = kBulkDelay - (sin_b > 0 ? half : -half);
  const double delay_right = kBulkDelay + (sin_b > 0 ? half : -half);
  add_fractional_impulse(p.left, delay_left, 1.0);
  add_fractional_impulse(p.right, delay_right, 1.0);

  // Head shadow: per-ear low pass whose cutoff falls as the source moves to
  // the opposite side; symmetric at bearing 0 so the two ears match exactly.
  const double shade_left = (1.0 - sin_b) / 2.0;   // 0 = fully ipsilateral
  const double shade_right = (1.0 + sin_b) / 2.0;
  one_pole_lowpass(p.left, cfg.shadow_cutoff * (1.0 - 0.8 * shade_left), sample_rate);
  one_pole_lowpass(p.right, cfg.shadow_cutoff * (1.0 - 0.8 * shade_right), sample_rate);
  return p;
}

HrirSet make_synthetic_hrirs(const HeadModelConfig& cfg, int sample_rate, double step_deg) {
  if (step_deg <= 0 || std::fmod(5.0, step_deg) > 1e-9)
    throw std::invalid_argument("make_synthetic_hrirs: grid step must divide 5 degrees");
  HrirSet set;
  set.sample_rate = sample_rate;
  for (double a = 0.0; a < 360.0 - 1e-9; a += step_deg) {
    set.azimuths.push_back(a);
    set.pairs.push_back(synth_hrir(a, cfg, sample_rate));
  }
  return set;
}

HrirSet load_hrir_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path index_path = fs::path(dir) / "index.json";
  if (!fs::exists(index_path))
    throw std::runtime_error("HRIR import: missing index.json in " + dir);
  std::ifstream f(index_path);
  nlohmann::json j;
  f >> j;

  HrirSet set;
  set.sample_rate = j.at("sample_rate").get<int>();
  std::vector<std::pair<double, HrirPair>> entries;
  for (auto& [key, val] : j.at("azimuths").items()) {
    const double az = std::stod(key);
    int sr_l = 0, sr_r = 0;
    Waveform l = read_wav_mono((fs::path(dir) / val.at("left").get<std::string>()).string(), &sr_l);
    Waveform r = read_wav_mono((fs::path(dir) / val.at("right").get<std::string>()).string(), &sr_r);
    if (sr_l != set.sample_rate || sr_r != set.sample_rate)
      throw std::runtime_error("HRIR import: sample rate mismatch at azimuth " + key);
    if (l.size() != r.size())
      throw std::runtime_error("HRIR import: left/right length mismatch at azimuth " + key);
    entries.emplace_back(wrap_deg(az), HrirPair{std::move(l), std::move(r)});
  }
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [az, pair] : entries) {
    set.azimuths.push_back(az);
    set.pairs.push_back(std::move(pair));
  }
  return set;
}

Waveform convolve(const Waveform& x, const Waveform& h) {
  if (x.empty() || h.empty()) return {};
  Waveform y(x.size() + h.size() - 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    for (std::size_t j = 0; j < h.size(); ++j) y[i + j] += xi * h[j];
  }
  return y;
}

BinauralWaveform spatialize(const Waveform& mono, double azimuth_deg, const HrirSet& hrirs,
                            int sample_rate) {
  if (mono.empty()) throw std::invalid_argument("spatialize: empty signal");
  if (sample_rate != hrirs.sample_rate)
    throw std::invalid_argument("spatialize: sample rate mismatch with HRIR set");
  const HrirPair& p = hrirs.nearest(azimuth_deg);
  Waveform l = convolve(mono, p.left);
  Waveform r = convolve(mono, p.right);
  l.resize(mono.size());
  r.resize(mono.size());
  return {std::move(l), std::move(r), sample_rate};
}

NoiseType noise_type_from_string(const std::string& s) {
  if (s == "wgn") return NoiseType::Wgn;
  if (s == "ssn") return NoiseType::Ssn;
  if (s == "external") return NoiseType::External;
  throw std::invalid_argument("unknown noise type: " + s);
}

std::string to_string(NoiseType t) {
  switch (t) {
    case NoiseType::Wgn: return "wgn";
    case NoiseType::Ssn: return "ssn";
    case NoiseType::External: return "external";
  }
  return "wgn";
}

std::vector<double> average_spectrum(const std::vector<const Waveform*>& reference,
                                     int fft_length) {
  if (reference.empty()) throw std::invalid_argument("average_spectrum: empty reference set");
  const int bins = fft_length / 2 + 1;
  std::vector<double> acc(bins, 0.0);
  std::size_t frames = 0;
  std::vector<double> buf(fft_length);
  std::vector<std::complex<double>> spec(bins);
  const int hop = fft_length / 2;
  for (const Waveform* w : reference) {
    if (!w || w->empty()) throw std::invalid_argument("average_spectrum: empty reference signal");
    for (std::size_t start = 0; start + fft_length <= w->size(); start += hop) {
      for (int i = 0; i < fft_length; ++i) {
        const double hann = 0.5 * (1.0 - std::cos(2.0 * kPi * i / fft_length));
        buf[i] = (*w)[start + i] * hann;
      }
      rfft_into(buf.data(), fft_length, spec.data());
      for (int k = 0; k < bins; ++k) acc[k] += std::norm(spec[k]);
      ++frames;
    }
  }
  if (frames == 0) throw std::invalid_argument("average_spectrum: references shorter than one frame");
  for (double& v : acc) v = std::sqrt(v / frames);
  return acc;
}

Waveform fir_from_spectrum(const std::vector<double>& spectrum, int fft_length) {
  if (static_cast<int>(spectrum.size()) != fft_length / 2 + 1)
    throw std::invalid_argument("fir_from_spectrum: spectrum size mismatch");
  std::vector<std::complex<double>> spec(spectrum.begin(), spectrum.end());
  Waveform kernel = irfft(spec, fft_length);
  for (double& v : kernel) v /= fft_length;
  // Zero-phase kernel -> linear phase by circular shift, then taper.
  Waveform fir(fft_length, 0.0);
  const int half = fft_length / 2;
  for (int i = 0; i < fft_length; ++i)
    fir[i] = kernel[(i + half) % fft_length];
  for (int i = 0; i < fft_length; ++i)
    fir[i] *= 0.5 * (1.0 - std::cos(2.0 * kPi * i / (fft_length - 1)));
  return fir;
}

Waveform speech_shaped_noise(const std::vector<const Waveform*>& reference,
                             double duration_s, int sample_rate, std::uint64_t seed) {
  if (reference.empty()) throw std::invalid_argument("speech_shaped_noise: empty reference set");
  Waveform fir = fir_from_spectrum(average_spectrum(reference));
  const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  Rng rng(seed);
  Waveform white(n + fir.size());
  for (double& v : white) v = rng.normal();
  Waveform shaped = convolve(white, fir);
  // Drop the filter transient so the output is stationary end to end.
  Waveform out(shaped.begin() + fir.size(), shaped.begin() + fir.size() + n);
  return out;
}

BinauralWaveform isotropic_noise(double duration_s, NoiseType noise_type, const HrirSet& hrirs,
                                 std::uint64_t seed, const Waveform* ssn_fir) {
  if (duration_s <= 0) throw std::invalid_argument("isotropic_noise: duration must be > 0");
  if (!hrirs.covers_full_circle())
    throw std::invalid_argument("isotropic_noise: HRIR set must cover the full circle at 5 degrees");
  if (noise_type == NoiseType::Ssn && !ssn_fir)
    throw std::invalid_argument("isotropic_noise: SSN requires a shaping filter");
  if (noise_type == NoiseType::External)
    throw std::invalid_argument("isotropic_noise: external noise is mixed via scene synthesis");

  const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * hrirs.sample_rate));
  Waveform acc_l(n, 0.0), acc_r(n, 0.0);
  const double gain = 1.0 / std::sqrt(static_cast<double>(hrirs.azimuths.size()));
  for (std::size_t s = 0; s < hrirs.azimuths.size(); ++s) {
    // Every source gets an independent deterministic stream.
    Rng rng(Rng::mix(seed, s));
    const std::size_t pad = hrirs.pairs[s].left.size() +
                            (noise_type == NoiseType::Ssn ? ssn_fir->size() : 0);
    Waveform src(n + pad);
    for (double& v : src) v = rng.normal();
    if (noise_type == NoiseType::Ssn) {
      Waveform shaped = convolve(src, *ssn_fir);
      src.assign(shaped.begin() + ssn_fir->size(), shaped.begin() + ssn_fir->size() + n + hrirs.pairs[s].left.size());
    }
    Waveform l = convolve(src, hrirs.pairs[s].left);
    Waveform r = convolve(src, hrirs.pairs[s].right);
    const std::size_t off = hrirs.pairs[s].left.size();  // skip the IR transient
    for (std::size_t i = 0; i < n; ++i) {
      acc_l[i] += gain * l[off + i];
      acc_r[i] += gain * r[off + i];
    }
  }
  return {std::move(acc_l), std::move(acc_r), hrirs.sample_rate};
}

MixResult mix_at_snr(const BinauralWaveform& speech, const BinauralWaveform& noise,
                     double target_avg_snr_db) {
  speech.validate();
  noise.validate();
  if (speech.length() != noise.length() || speech.sample_rate != noise.sample_rate)
    throw std::invalid_argument("mix_at_snr: length or rate mismatch");
  const double ps_l = power(speech.left), ps_r = power(speech.right);
  const double pn_l = power(noise.left), pn_r = power(noise.right);
  if (ps_l <= 0.0 || ps_r <= 0.0) throw std::invalid_argument("mix_at_snr: silent speech");
  if (pn_l <= 0.0 || pn_r <= 0.0) throw std::invalid_argument("mix_at_snr: silent noise");

  // (SNR_L + SNR_R)/2 == target solves in closed form for the noise gain.
  const double g2 = std::sqrt(ps_l * ps_r / (pn_l * pn_r)) * std::pow(10.0, -target_avg_snr_db / 10.0);
  const double g = std::sqrt(g2);

  MixResult out;
  out.noise_scale = g;
  out.noisy.sample_rate = speech.sample_rate;
  out.noisy.left.resize(speech.length());
  out.noisy.right.resize(speech.length());
  for (std::size_t i = 0; i < speech.length(); ++i) {
    out.noisy.left[i] = speech.left[i] + g * noise.left[i];
    out.noisy.right[i] = speech.right[i] + g * noise.right[i];
  }
  out.snr_left_db = 10.0 * std::log10(ps_l / (g2 * pn_l));
  out.snr_right_db = 10.0 * std::log10(ps_r / (g2 * pn_r));
  return out;
}

}  // namespace bse
