#include "bse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "bse/cues.hpp"
#include "bse/fft.hpp"
#include "bse/losses.hpp"
#include "bse/stoi.hpp"
#include "bse/training.hpp"

namespace bse {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kBands = 16;
constexpr double kFrameSeconds = 0.025;
constexpr double kActivityRangeDb = 40.0;
constexpr double kSnrFloorDb = -10.0;
constexpr double kSnrCeilDb = 35.0;

double mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_inv(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Triangular mel filterbank, (bands x bins) row-major.
std::vector<double> mel_bank(int bands, int fft, int sample_rate) {
  const int bins = fft / 2 + 1;
  std::vector<double> edges(bands + 2);
  const double mmax = mel(sample_rate / 2.0);
  for (int i = 0; i < bands + 2; ++i) edges[i] = mel_inv(mmax * i / (bands + 1));
  std::vector<double> bank(static_cast<std::size_t>(bands) * bins, 0.0);
  for (int b = 0; b < bands; ++b) {
    const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / fft;
      double w = 0.0;
      if (f > lo && f < mid) w = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi) w = (hi - f) / (hi - mid);
      bank[static_cast<std::size_t>(b) * bins + k] = w;
    }
  }
  return bank;
}

}  // namespace

double fw_segsnr(const Waveform& clean, const Waveform& test, int sample_rate) {
  if (clean.size() != test.size())
    throw std::invalid_argument("fw_segsnr: length mismatch");
  const int frame = static_cast<int>(std::llround(kFrameSeconds * sample_rate));
  const int hop = frame / 2;
  if (clean.size() < static_cast<std::size_t>(frame))
    throw std::invalid_argument("fw_segsnr: signal shorter than one frame");
  int fft = 1;
  while (fft < frame) fft <<= 1;
  const int bins = fft / 2 + 1;
  const auto bank = mel_bank(kBands, fft, sample_rate);

  std::vector<double> win(frame);
  for (int i = 0; i < frame; ++i)
    win[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / (frame - 1)));

  const int n_frames = static_cast<int>((clean.size() - frame) / hop) + 1;
  std::vector<double> frame_energy(n_frames, 0.0), frame_snr(n_frames, 0.0);
  double peak = 0.0;
  std::vector<double> bc(fft, 0.0), be(fft, 0.0);
  std::vector<std::complex<double>> sc(bins), se(bins);
  for (int m = 0; m < n_frames; ++m) {
    std::fill(bc.begin(), bc.end(), 0.0);
    std::fill(be.begin(), be.end(), 0.0);
    for (int i = 0; i < frame; ++i) {
      const std::size_t t = static_cast<std::size_t>(m) * hop + i;
      bc[i] = win[i] * clean[t];
      be[i] = win[i] * (test[t] - clean[t]);
      frame_energy[m] += bc[i] * bc[i];
    }
    peak = std::max(peak, frame_energy[m]);
    rfft_into(bc.data(), fft, sc.data());
    rfft_into(be.data(), fft, se.data());

    double num = 0.0, den = 0.0;
    for (int b = 0; b < kBands; ++b) {
      double ec = 0.0, ee = 0.0;
      const double* w = &bank[static_cast<std::size_t>(b) * bins];
      for (int k = 0; k < bins; ++k) {
        ec += w[k] * std::norm(sc[k]);
        ee += w[k] * std::norm(se[k]);
      }
      if (ec <= 0.0) continue;
      const double snr_db =
          std::clamp(10.0 * std::log10(ec / std::max(ee, 1e-300)), kSnrFloorDb, kSnrCeilDb);
      // Bands weighted by the clean band magnitude raised to 0.2 (the
      // standard choice that best tracks subjective quality).
      const double bw = std::pow(ec, 0.1);
      num += bw * snr_db;
      den += bw;
    }
    frame_snr[m] = den > 0.0 ? num / den : kSnrFloorDb;
  }
  if (peak <= 0.0) throw std::invalid_argument("fw_segsnr: silent clean signal");

  const double thresh = peak * std::pow(10.0, -kActivityRangeDb / 10.0);
  double acc = 0.0;
  int active = 0;
  for (int m = 0; m < n_frames; ++m)
    if (frame_energy[m] > thresh) {
      acc += frame_snr[m];
      ++active;
    }
  return acc / active;  // peak frame is always active
}

double delta_fw_segsnr(const BinauralWaveform& clean, const BinauralWaveform& noisy,
                       const BinauralWaveform& enhanced) {
  const double l = fw_segsnr(clean.left, enhanced.left, clean.sample_rate) -
                   fw_segsnr(clean.left, noisy.left, clean.sample_rate);
  const double r = fw_segsnr(clean.right, enhanced.right, clean.sample_rate) -
                   fw_segsnr(clean.right, noisy.right, clean.sample_rate);
  return 0.5 * (l + r);
}

double better_ear_stoi(const BinauralWaveform& clean, const BinauralWaveform& test) {
  return std::max(stoi(clean.left, test.left, clean.sample_rate, StoiMode::Eval),
                  stoi(clean.right, test.right, clean.sample_rate, StoiMode::Eval));
}

CueErrors cue_errors(const BinauralWaveform& clean, const BinauralWaveform& enhanced,
                     const StftConfig& cfg) {
  const auto cl = stft(clean.left, cfg, clean.sample_rate);
  const auto cr = stft(clean.right, cfg, clean.sample_rate);
  const auto el = stft(enhanced.left, cfg, enhanced.sample_rate);
  const auto er = stft(enhanced.right, cfg, enhanced.sample_rate);
  const BinaryMask mask = joint_ibm(cl, cr);
  CueErrors out;
  bool empty_ild = false, empty_ipd = false;
  out.ild_db = ild_loss(cl, cr, el, er, mask, &empty_ild);
  out.ipd_deg = ipd_loss(cl, cr, el, er, mask, &empty_ipd) * 180.0 / kPi;
  out.empty_mask = empty_ild || empty_ipd;
  return out;
}

std::vector<BucketAggregate> aggregate(const std::vector<UtteranceRecord>& records,
                                       const std::vector<double>& bucket_centers) {
  std::vector<BucketAggregate> out;
  for (double c : bucket_centers) {
    BucketAggregate b;
    b.center_snr_db = c;
    out.push_back(b);
  }
  for (const auto& r : records) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < out.size(); ++i)
      if (std::abs(r.input_snr_db - out[i].center_snr_db) <
          std::abs(r.input_snr_db - out[best].center_snr_db))
        best = i;
    auto& b = out[best];
    ++b.count;
    b.stoi_noisy += r.stoi_noisy;
    b.stoi_enhanced += r.stoi_enhanced;
    b.delta_fw_segsnr_db += r.delta_fw_segsnr_db;
    b.ild_err_db += r.ild_err_db;
    b.ipd_err_deg += r.ipd_err_deg;
  }
  for (auto& b : out)
    if (b.count > 0) {
      b.stoi_noisy /= b.count;
      b.stoi_enhanced /= b.count;
      b.delta_fw_segsnr_db /= b.count;
      b.ild_err_db /= b.count;
      b.ipd_err_deg /= b.count;
    }
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["records"] = nlohmann::json::array();
  for (const auto& r : records)
    j["records"].push_back({{"id", r.id},
                            {"input_snr_db", r.input_snr_db},
                            {"better_ear_stoi_noisy", r.stoi_noisy},
                            {"better_ear_stoi_enhanced", r.stoi_enhanced},
                            {"delta_fw_segsnr_db", r.delta_fw_segsnr_db},
                            {"ild_err_db", r.ild_err_db},
                            {"ipd_err_deg", r.ipd_err_deg}});
  j["buckets"] = nlohmann::json::array();
  for (const auto& b : buckets)
    j["buckets"].push_back({{"center_snr_db", b.center_snr_db},
                            {"count", b.count},
                            {"better_ear_stoi_noisy", b.stoi_noisy},
                            {"better_ear_stoi_enhanced", b.stoi_enhanced},
                            {"delta_fw_segsnr_db", b.delta_fw_segsnr_db},
                            {"ild_err_db", b.ild_err_db},
                            {"ipd_err_deg", b.ipd_err_deg}});
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << "metric (better-ear STOI substitutes for MBSTOI)";
  os << "\n" << std::string(48, '-') << "\n";
  auto row = [&](const std::string& name, auto get) {
    os << name;
    for (std::size_t i = name.size(); i < 24; ++i) os << ' ';
    for (const auto& b : buckets) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%10.3f", get(b));
      os << buf;
    }
    os << '\n';
  };
  os << "input SNR bucket (dB)   ";
  for (const auto& b : buckets) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%10.1f", b.center_snr_db);
    os << buf;
  }
  os << '\n';
  row("scene count", [](const BucketAggregate& b) { return double(b.count); });
  row("BE-STOI noisy", [](const BucketAggregate& b) { return b.stoi_noisy; });
  row("BE-STOI enhanced", [](const BucketAggregate& b) { return b.stoi_enhanced; });
  row("dfwSegSNR (dB)", [](const BucketAggregate& b) { return b.delta_fw_segsnr_db; });
  row("ILD error (dB)", [](const BucketAggregate& b) { return b.ild_err_db; });
  row("IPD error (deg)", [](const BucketAggregate& b) { return b.ipd_err_deg; });
  return os.str();
}

EvalReport evaluate_manifest(const DatasetManifest& manifest, const std::string& split,
                             const SceneRenderer& renderer, Model& model,
                             const StftConfig& cfg,
                             const std::vector<double>& bucket_centers) {
  EvalReport report;
  for (const SceneSpec* spec : manifest.split(split)) {
    const RenderedScene scene = renderer.render(*spec);
    const BinauralWaveform enhanced = enhance(scene.noisy, model, cfg);
    UtteranceRecord r;
    r.id = spec->id;
    r.input_snr_db = 0.5 * (scene.snr_left_db + scene.snr_right_db);
    r.stoi_noisy = better_ear_stoi(scene.clean, scene.noisy);
    r.stoi_enhanced = better_ear_stoi(scene.clean, enhanced);
    r.delta_fw_segsnr_db = delta_fw_segsnr(scene.clean, scene.noisy, enhanced);
    const CueErrors cues = cue_errors(scene.clean, enhanced, cfg);
    r.ild_err_db = cues.ild_db;
    r.ipd_err_deg = cues.ipd_deg;
    report.records.push_back(std::move(r));
  }
  report.buckets = aggregate(report.records, bucket_centers);
  return report;
}

}  // namespace bse
