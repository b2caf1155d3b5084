#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bse/cues.hpp"
#include "bse/fft.hpp"
#include "bse/rng.hpp"
#include "bse/spatial.hpp"
#include "bse/stft.hpp"
#include "bse/wav.hpp"

using namespace bse;

namespace {
constexpr double kPi = 3.14159265358979323846;

double correlation(const Waveform& a, const Waveform& b) {
  double sa = 0, sb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i] * a[i];
    sb += b[i] * b[i];
    sab += a[i] * b[i];
  }
  return sab / std::sqrt(sa * sb);
}

double db_power_ratio(const Waveform& a, const Waveform& b) {
  double pa = 0, pb = 0;
  for (double v : a) pa += v * v;
  for (double v : b) pb += v * v;
  return 10.0 * std::log10(pa / pb);
}
}  // namespace

TEST_CASE("woodworth itd at 90 degrees") {
  HeadModelConfig cfg;
  cfg.head_radius = 0.0875;
  cfg.speed_of_sound = 343.0;
  const double itd = woodworth_itd(kPi / 2, cfg);
  CHECK(itd == doctest::Approx(0.0875 / 343.0 * (kPi / 2 + 1.0)).epsilon(1e-12));
  CHECK(itd * 1000.0 == doctest::Approx(0.6558).epsilon(1e-3));
}

TEST_CASE("synth_hrir symmetries") {
  HeadModelConfig cfg;
  auto front = synth_hrir(0.0, cfg, 16000);
  for (std::size_t i = 0; i < front.left.size(); ++i)
    CHECK(front.left[i] == doctest::Approx(front.right[i]).epsilon(1e-14));

  auto plus = synth_hrir(40.0, cfg, 16000);
  auto minus = synth_hrir(-40.0, cfg, 16000);
  for (std::size_t i = 0; i < plus.left.size(); ++i) {
    CHECK(plus.left[i] == doctest::Approx(minus.right[i]).epsilon(1e-12));
    CHECK(plus.right[i] == doctest::Approx(minus.left[i]).epsilon(1e-12));
  }
}

TEST_CASE("spatialize: identity IR passes signal through; errors checked") {
  HrirSet set;
  set.sample_rate = 16000;
  set.azimuths = {0.0};
  HrirPair p{Waveform(8, 0.0), Waveform(8, 0.0)};
  p.left[0] = 1.0;
  p.right[0] = 1.0;
  set.pairs.push_back(p);

  Rng rng(5);
  Waveform mono(500);
  for (double& v : mono) v = rng.normal();
  BinauralWaveform out = spatialize(mono, 0.0, set, 16000);
  for (std::size_t i = 0; i < mono.size(); ++i) {
    CHECK(out.left[i] == doctest::Approx(mono[i]));
    CHECK(out.right[i] == doctest::Approx(mono[i]));
  }
  CHECK_THROWS(spatialize(mono, 0.0, set, 8000));
  CHECK_THROWS(spatialize(Waveform{}, 0.0, set, 16000));
}

TEST_CASE("spatialize at 0 degrees gives ~0 dB ILD in active bins") {
  HeadModelConfig cfg;
  HrirSet set = make_synthetic_hrirs(cfg, 16000);
  Rng rng(6);
  Waveform mono(8000);
  for (double& v : mono) v = rng.normal();
  BinauralWaveform out = spatialize(mono, 0.0, set, 16000);
  StftConfig c;
  auto SL = stft(out.left, c), SR = stft(out.right, c);
  BinaryMask act = joint_ibm(SL, SR, 20.0);
  CueMap ild = ild_map(SL, SR);
  double max_ild = 0.0;
  for (std::size_t i = 0; i < act.v.size(); ++i)
    if (act.v[i]) max_ild = std::max(max_ild, std::abs(ild.values.v[i]));
  CHECK(max_ild < 0.1);
}

TEST_CASE("spatialize at 90 degrees shows the Woodworth lag between ears") {
  HeadModelConfig cfg;
  HrirSet set = make_synthetic_hrirs(cfg, 16000);
  Rng rng(7);
  Waveform mono(16000);
  for (double& v : mono) v = rng.normal();
  BinauralWaveform out = spatialize(mono, 90.0, set, 16000);

  // Cross-correlation oracle: the right ear lags the left by ITD * sr.
  const int max_lag = 30;
  int best_lag = 0;
  double best = -1e300;
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    double acc = 0.0;
    for (std::size_t i = max_lag; i + max_lag < mono.size(); ++i)
      acc += out.left[i] * out.right[i + lag];
    if (acc > best) {
      best = acc;
      best_lag = lag;
    }
  }
  const double expected = woodworth_itd(kPi / 2, cfg) * 16000.0;
  CHECK(std::abs(best_lag - expected) <= 1.0);
}

TEST_CASE("spatialization is linear in the source") {
  HeadModelConfig cfg;
  HrirSet set = make_synthetic_hrirs(cfg, 16000, 5.0);
  Rng rng(8);
  Waveform mono(1000);
  for (double& v : mono) v = rng.normal();
  Waveform scaled = mono;
  for (double& v : scaled) v *= 2.5;
  auto a = spatialize(mono, 35.0, set, 16000);
  auto b = spatialize(scaled, 35.0, set, 16000);
  for (std::size_t i = 0; i < mono.size(); ++i)
    CHECK(b.left[i] == doctest::Approx(2.5 * a.left[i]).epsilon(1e-12));
}

TEST_CASE("isotropic noise: determinism, balance and seed independence") {
  HeadModelConfig cfg;
  HrirSet set = make_synthetic_hrirs(cfg, 16000);
  auto n1 = isotropic_noise(1.0, NoiseType::Wgn, set, 42);
  auto n2 = isotropic_noise(1.0, NoiseType::Wgn, set, 42);
  CHECK(n1.left == n2.left);
  CHECK(n1.right == n2.right);

  auto n3 = isotropic_noise(1.0, NoiseType::Wgn, set, 43);
  CHECK(std::abs(correlation(n1.left, n3.left)) < 0.1);

  auto nl = isotropic_noise(10.0, NoiseType::Wgn, set, 44);
  CHECK(std::abs(db_power_ratio(nl.left, nl.right)) < 1.0);

  HrirSet sparse;
  sparse.sample_rate = 16000;
  sparse.azimuths = {0.0, 90.0, 180.0, 270.0};
  for (double a : sparse.azimuths) sparse.pairs.push_back(synth_hrir(a, cfg, 16000));
  CHECK_THROWS(isotropic_noise(1.0, NoiseType::Wgn, sparse, 1));
}

TEST_CASE("isotropic field coherence follows the ring-field Bessel model") {
  HeadModelConfig cfg;
  HrirSet set = make_synthetic_hrirs(cfg, 16000);
  auto n = isotropic_noise(10.0, NoiseType::Wgn, set, 7);

  // Welch cross-spectral coherence estimate.
  const int nfft = 512, hop = 256;
  const int bins = nfft / 2 + 1;
  std::vector<double> pll(bins, 0.0), prr(bins, 0.0);
  std::vector<std::complex<double>> plr(bins, 0.0);
  std::vector<double> buf(nfft);
  std::vector<std::complex<double>> sl(bins), sr(bins);
  int segs = 0;
  for (std::size_t start = 0; start + nfft <= n.left.size(); start += hop, ++segs) {
    for (int i = 0; i < nfft; ++i) {
      const double w = 0.5 * (1.0 - std::cos(2.0 * kPi * i / nfft));
      buf[i] = n.left[start + i] * w;
    }
    rfft_into(buf.data(), nfft, sl.data());
    for (int i = 0; i < nfft; ++i) {
      const double w = 0.5 * (1.0 - std::cos(2.0 * kPi * i / nfft));
      buf[i] = n.right[start + i] * w;
    }
    rfft_into(buf.data(), nfft, sr.data());
    for (int k = 0; k < bins; ++k) {
      pll[k] += std::norm(sl[k]);
      prr[k] += std::norm(sr[k]);
      plr[k] += sl[k] * std::conj(sr[k]);
    }
  }

  // Effective ear spacing of the delay model: the mean of (b + sin b) over the
  // ring matches a free-field pair of spacing ~2.44 r.
  const double d_eff = 2.44 * cfg.head_radius;
  double worst = 0.0;
  for (int k = 1; k < bins; ++k) {
    const double f = k * 16000.0 / nfft;
    if (f >= 1500.0) break;
    const double coh2 = std::norm(plr[k]) / (pll[k] * prr[k]);
    const double arg = 2.0 * kPi * f * d_eff / cfg.speed_of_sound;
    const double j0 = std::cyl_bessel_j(0.0, arg);
    worst = std::max(worst, std::abs(coh2 - j0 * j0));
  }
  CHECK(worst < 0.15);
}

TEST_CASE("speech shaped noise matches the reference spectrum") {
  Rng rng(31);
  // Reference: pink-ish shaped noise via one-pole smoothing.
  Waveform ref(64000);
  double y = 0.0;
  for (double& v : ref) {
    y = 0.7 * y + 0.3 * rng.normal();
    v = y;
  }
  std::vector<const Waveform*> refs{&ref};
  Waveform ssn = speech_shaped_noise(refs, 4.0, 16000, 11);
  CHECK(ssn.size() == 64000);

  Waveform ssn2 = speech_shaped_noise(refs, 4.0, 16000, 11);
  CHECK(ssn == ssn2);

  auto target = average_spectrum(refs);
  std::vector<const Waveform*> outv{&ssn};
  auto got = average_spectrum(outv);

  // Mean absolute deviation of the log spectra over 100 Hz - 7 kHz, after
  // aligning the overall level.
  double mean_diff = 0.0;
  int cnt = 0;
  std::vector<double> diffs;
  for (std::size_t k = 0; k < target.size(); ++k) {
    const double f = k * 16000.0 / 512;
    if (f < 100.0 || f > 7000.0) continue;
    diffs.push_back(20.0 * std::log10(got[k] / target[k]));
  }
  double offset = 0.0;
  for (double d : diffs) offset += d / diffs.size();
  for (double d : diffs) {
    mean_diff += std::abs(d - offset);
    ++cnt;
  }
  CHECK(mean_diff / cnt < 3.0);
}

TEST_CASE("ssn with white reference stays flat") {
  Rng rng(32);
  Waveform ref(64000);
  for (double& v : ref) v = rng.normal();
  std::vector<const Waveform*> refs{&ref};
  Waveform ssn = speech_shaped_noise(refs, 4.0, 16000, 3);
  std::vector<const Waveform*> outv{&ssn};
  auto spec = average_spectrum(outv);
  double mean = 0.0;
  int cnt = 0;
  for (std::size_t k = 4; k + 4 < spec.size(); ++k) {
    mean += 20.0 * std::log10(spec[k]);
    ++cnt;
  }
  mean /= cnt;
  for (std::size_t k = 4; k + 4 < spec.size(); ++k)
    CHECK(std::abs(20.0 * std::log10(spec[k]) - mean) < 3.0);
}

TEST_CASE("mix_at_snr hits the target mean SNR") {
  Rng rng(9);
  BinauralWaveform sp{Waveform(4000), Waveform(4000), 16000};
  BinauralWaveform nz{Waveform(4000), Waveform(4000), 16000};
  for (auto* w : {&sp.left, &sp.right, &nz.left, &nz.right})
    for (double& v : *w) v = rng.normal();
  // asymmetric ears
  for (double& v : sp.left) v *= 2.0;

  for (double target : {-7.0, 0.0, 6.0, 16.0}) {
    MixResult r = mix_at_snr(sp, nz, target);
    CHECK((r.snr_left_db + r.snr_right_db) / 2 == doctest::Approx(target).epsilon(1e-6));
  }

  // identical signals at 0 dB: scale 1, both SNRs 0
  MixResult same = mix_at_snr(sp, sp, 0.0);
  CHECK(same.noise_scale == doctest::Approx(1.0));
  CHECK(same.snr_left_db == doctest::Approx(0.0));
  CHECK(same.snr_right_db == doctest::Approx(0.0));

  // +6 dB vs 0 dB target changes the noise scale by 10^(-6/20)
  MixResult a = mix_at_snr(sp, nz, 6.0), b = mix_at_snr(sp, nz, 0.0);
  CHECK(a.noise_scale / b.noise_scale == doctest::Approx(std::pow(10.0, -6.0 / 20.0)).epsilon(1e-9));

  BinauralWaveform silent{Waveform(4000, 0.0), Waveform(4000, 0.0), 16000};
  CHECK_THROWS(mix_at_snr(sp, silent, 0.0));
  CHECK_THROWS(mix_at_snr(silent, nz, 0.0));
}

TEST_CASE("asymmetric scene: per-ear SNRs differ but the mean hits target") {
  HeadModelConfig cfg;
  HrirSet set = make_synthetic_hrirs(cfg, 16000);
  Rng rng(10);
  Waveform mono(8000);
  for (double& v : mono) v = rng.normal();
  BinauralWaveform sp = spatialize(mono, 90.0, set, 16000);
  BinauralWaveform nz = isotropic_noise(0.5, NoiseType::Wgn, set, 77);
  MixResult r = mix_at_snr(sp, nz, 3.0);
  CHECK((r.snr_left_db + r.snr_right_db) / 2 == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(std::abs(r.snr_left_db - r.snr_right_db) > 0.5);
}

TEST_CASE("mirror symmetry: +theta equals -theta with ears swapped") {
  HeadModelConfig cfg;
  HrirSet set = make_synthetic_hrirs(cfg, 16000);
  Rng rng(12);
  Waveform mono(2000);
  for (double& v : mono) v = rng.normal();
  auto plus = spatialize(mono, 55.0, set, 16000);
  auto minus = spatialize(mono, -55.0, set, 16000);
  for (std::size_t i = 0; i < mono.size(); ++i) {
    CHECK(plus.left[i] == doctest::Approx(minus.right[i]).epsilon(1e-9));
    CHECK(plus.right[i] == doctest::Approx(minus.left[i]).epsilon(1e-9));
  }
}

TEST_CASE("hrir import round trip") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "bse_hrir_test";
  fs::create_directories(dir);
  HeadModelConfig cfg;
  auto p0 = synth_hrir(0.0, cfg, 16000);
  auto p90 = synth_hrir(90.0, cfg, 16000);
  write_wav_mono((dir / "az000_L.wav").string(), p0.left, 16000);
  write_wav_mono((dir / "az000_R.wav").string(), p0.right, 16000);
  write_wav_mono((dir / "az090_L.wav").string(), p90.left, 16000);
  write_wav_mono((dir / "az090_R.wav").string(), p90.right, 16000);
  std::ofstream idx(dir / "index.json");
  idx << R"({"sample_rate":16000,"azimuths":{)"
      << R"("0":{"left":"az000_L.wav","right":"az000_R.wav"},)"
      << R"("90":{"left":"az090_L.wav","right":"az090_R.wav"}}})";
  idx.close();

  HrirSet set = load_hrir_dir(dir.string());
  CHECK(set.sample_rate == 16000);
  REQUIRE(set.azimuths.size() == 2);
  CHECK(set.azimuths[0] == 0.0);
  CHECK(set.azimuths[1] == 90.0);
  for (std::size_t i = 0; i < p0.left.size(); ++i)
    CHECK(set.pairs[0].left[i] == doctest::Approx(p0.left[i]).epsilon(1e-5));
  fs::remove_all(dir);
}
