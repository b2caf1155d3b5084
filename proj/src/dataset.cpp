#include "bse/corpus.hpp"
#include "bse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "bse/rng.hpp"
#include "bse/stft.hpp"
#include "bse/wav.hpp"

namespace bse {

namespace {
constexpr double kPi = 3.14159265358979323846;

/// One biquad resonator at (freq, bandwidth); filters x in place.
void resonate(Waveform& x, double freq, double bw, int fs) {
  const double r = std::exp(-kPi * bw / fs);
  const double theta = 2.0 * kPi * freq / fs;
  const double a1 = -2.0 * r * std::cos(theta), a2 = r * r;
  const double g = 1.0 - r;  // keeps the peak gain roughly level across freqs
  double y1 = 0.0, y2 = 0.0;
  for (double& s : x) {
    const double y = g * s - a1 * y1 - a2 * y2;
    y2 = y1;
    y1 = y;
    s = y;
  }
}
}  // namespace

Waveform synth_utterance(double seconds, int sample_rate, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = static_cast<std::size_t>(seconds * sample_rate);
  const double f0_base = 90.0 + 80.0 * rng.uniform();
  const double syllable_rate = 3.0 + 2.0 * rng.uniform();
  const double syl_phase = 2.0 * kPi * rng.uniform();

  // Voiced source: impulse-ish glottal pulses with pitch drift.
  Waveform voiced(n, 0.0);
  double phase = rng.uniform();
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    const double f0 = f0_base * (1.0 + 0.08 * std::sin(2.0 * kPi * 0.7 * t) +
                                 0.02 * std::sin(2.0 * kPi * 5.1 * t));
    phase += f0 / sample_rate;
    if (phase >= 1.0) {
      phase -= 1.0;
      voiced[i] = 1.0;
    }
  }

  // Formant track: three resonances gliding between vowel-ish targets.
  Waveform shaped = voiced;
  resonate(shaped, 450.0 + 250.0 * rng.uniform(), 90.0, sample_rate);
  resonate(shaped, 1300.0 + 700.0 * rng.uniform(), 140.0, sample_rate);
  resonate(shaped, 2500.0 + 600.0 * rng.uniform(), 220.0, sample_rate);

  // Unvoiced frication: bandpassed noise gated against the syllable envelope.
  Waveform noise(n);
  for (double& s : noise) s = rng.normal();
  resonate(noise, 3200.0, 1500.0, sample_rate);

  // Two incommensurate modulation rates so the envelope is irregular, with a
  // floor so active speech never collapses to digital silence.
  const double rate2 = syllable_rate * 0.73 + 1.1;
  const double phase2 = 2.0 * kPi * rng.uniform();
  Waveform out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    const double m1 = 0.5 * (1.0 + std::sin(2.0 * kPi * syllable_rate * t + syl_phase));
    const double m2 = 0.5 * (1.0 + std::sin(2.0 * kPi * rate2 * t + phase2));
    const double env = 0.45 + 0.55 * (0.35 * m1 + 0.65 * m1 * m2);
    out[i] = env * shaped[i] + 0.04 * (1.2 - env) * noise[i];
  }

  // Normalize to unit RMS.
  double e = 0.0;
  for (double s : out) e += s * s;
  const double rms = std::sqrt(e / static_cast<double>(n));
  if (rms > 0.0)
    for (double& s : out) s /= rms;
  return out;
}

using nlohmann::json;

std::vector<const SceneSpec*> DatasetManifest::split(const std::string& name) const {
  std::vector<const SceneSpec*> out;
  for (const auto& r : records)
    if (r.split == name) out.push_back(&r);
  return out;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("manifest: cannot write " + path);
  for (const auto& r : m.records) {
    json j{{"id", r.id},
           {"clean_file", r.clean_file},
           {"azimuth_deg", r.azimuth_deg},
           {"noise", to_string(r.noise)},
           {"seed", r.seed},
           {"target_snr_db", r.target_snr_db},
           {"split", r.split}};
    f << j.dump() << '\n';
  }
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("manifest: cannot open " + path);
  DatasetManifest m;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    SceneSpec r;
    r.id = j.at("id");
    r.clean_file = j.at("clean_file");
    r.azimuth_deg = j.at("azimuth_deg");
    r.noise = noise_type_from_string(j.at("noise"));
    r.seed = j.at("seed");
    r.target_snr_db = j.at("target_snr_db");
    r.split = j.at("split");
    m.records.push_back(std::move(r));
  }
  return m;
}

DatasetManifest build_dataset(const std::vector<std::string>& corpus_files,
                              const BuildConfig& cfg, std::uint64_t seed) {
  if (corpus_files.empty()) throw std::invalid_argument("build_dataset: empty corpus");
  if (cfg.count <= 0) throw std::invalid_argument("build_dataset: count must be > 0");
  if (cfg.noise_types.empty())
    throw std::invalid_argument("build_dataset: need at least one noise type");

  // Splits are disjoint by source utterance: assign each corpus file to one
  // split, then draw every scene's utterance from its split's pool.
  std::vector<std::string> files = corpus_files;
  std::sort(files.begin(), files.end());
  Rng rng(seed);
  for (std::size_t i = files.size(); i > 1; --i)
    std::swap(files[i - 1], files[rng.below(i)]);
  const std::size_t nf = files.size();
  std::size_t f_train = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.train_ratio * nf));
  std::size_t f_val = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.val_ratio * nf));
  if (f_train + f_val >= nf && nf >= 3) {
    f_train = nf - 2;
    f_val = 1;
  } else if (nf < 3) {
    throw std::invalid_argument("build_dataset: need at least 3 corpus files for disjoint splits");
  }
  auto pool = [&](const std::string& s) -> std::pair<std::size_t, std::size_t> {
    if (s == "train") return {0, f_train};
    if (s == "val") return {f_train, f_val};
    return {f_train + f_val, nf - f_train - f_val};
  };

  const int n_train = static_cast<int>(std::llround(cfg.train_ratio * cfg.count));
  const int n_val = static_cast<int>(std::llround(cfg.val_ratio * cfg.count));
  const int steps = static_cast<int>(
      std::floor((cfg.azimuth_hi_deg - cfg.azimuth_lo_deg) / cfg.azimuth_step_deg)) + 1;

  DatasetManifest m;
  for (int i = 0; i < cfg.count; ++i) {
    SceneSpec r;
    r.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    const auto [off, len] = pool(r.split);
    r.clean_file = files[off + rng.below(len)];
    r.azimuth_deg = cfg.azimuth_lo_deg +
                    cfg.azimuth_step_deg * static_cast<double>(rng.below(steps));
    r.noise = cfg.noise_types[rng.below(cfg.noise_types.size())];
    r.target_snr_db = rng.uniform(cfg.snr_lo_db, cfg.snr_hi_db);
    r.seed = rng.next_u64();
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene%05d", i);
    r.id = buf;
    m.records.push_back(std::move(r));
  }
  return m;
}

SceneRenderer::SceneRenderer(HrirSet hrirs, double seconds, int sample_rate)
    : hrirs_(std::move(hrirs)), seconds_(seconds), sample_rate_(sample_rate) {
  if (seconds <= 0) throw std::invalid_argument("SceneRenderer: seconds must be > 0");
  if (hrirs_.sample_rate != sample_rate)
    throw std::invalid_argument("SceneRenderer: HRIR sample rate mismatch");
}

const Waveform& SceneRenderer::utterance(const std::string& path) const {
  auto it = cache_.find(path);
  if (it != cache_.end()) return it->second;
  Waveform w;
  if (path.rfind("synth:", 0) == 0) {
    const std::uint64_t seed = std::stoull(path.substr(6));
    w = synth_utterance(seconds_ + 1.0, sample_rate_, seed);
  } else {
    int rate = 0;
    w = read_wav_mono(path, &rate);
    if (rate != sample_rate_) w = resample(w, rate, sample_rate_);
  }
  return cache_.emplace(path, std::move(w)).first->second;
}

RenderedScene SceneRenderer::render(const SceneSpec& spec) const {
  const Waveform& full = utterance(spec.clean_file);
  const std::size_t n = static_cast<std::size_t>(std::llround(seconds_ * sample_rate_));
  if (full.size() < n)
    throw std::runtime_error("SceneRenderer: utterance shorter than scene length: " +
                             spec.clean_file);
  Rng rng(spec.seed);
  const std::size_t off = full.size() > n ? rng.below(full.size() - n + 1) : 0;
  const Waveform crop(full.begin() + off, full.begin() + off + n);

  RenderedScene out;
  out.clean = spatialize(crop, spec.azimuth_deg, hrirs_, sample_rate_);
  const Waveform* fir = nullptr;
  Waveform fir_local;
  if (spec.noise == NoiseType::Ssn) {
    // Shape the diffuse field to the scene's own long-term speech spectrum.
    fir_local = fir_from_spectrum(average_spectrum({&crop}));
    fir = &fir_local;
  }
  out.noise = isotropic_noise(seconds_, spec.noise, hrirs_, rng.next_u64(), fir);
  MixResult mix = mix_at_snr(out.clean, out.noise, spec.target_snr_db);
  out.noisy = std::move(mix.noisy);
  out.snr_left_db = mix.snr_left_db;
  out.snr_right_db = mix.snr_right_db;
  return out;
}

}  // namespace bse
