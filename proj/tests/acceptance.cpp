// Acceptance checklist: one pass/fail line per criterion, nonzero exit if
// any criterion fails. The training criterion runs last because it trains
// two small models end to end.
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bse/checkpoint.hpp"
#include "bse/corpus.hpp"
#include "bse/cues.hpp"
#include "bse/dataset.hpp"
#include "bse/fft.hpp"
#include "bse/losses.hpp"
#include "bse/metrics.hpp"
#include "bse/model.hpp"
#include "bse/rng.hpp"
#include "bse/spatial.hpp"
#include "bse/stft.hpp"
#include "bse/stoi.hpp"
#include "bse/training.hpp"

using namespace bse;
namespace ad = bse::ad;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;
int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%s] %2d. %s (%s)\n", ok ? "PASS" : "FAIL", id, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

ad::Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
  ad::Tensor t(shape);
  Rng rng(seed);
  for (double& x : t.v) x = rng.normal();
  return t;
}

ComplexSpectrogram random_spec(int K, int L, std::uint64_t seed) {
  ComplexSpectrogram s(K, L);
  Rng rng(seed);
  for (auto& v : s.v) v = {rng.normal(), rng.normal()};
  return s;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.encoder_channels = {4, 8, 8};
  c.embed_dim = 32;
  c.attn_hidden = 16;
  c.attn_heads = 4;
  c.post_linear_features = 64;
  return c;
}

// ---------------------------------------------------------------------------

void criterion_stft_reconstruction() {
  const Waveform x = synth_utterance(2.0, 16000, 1);
  const StftConfig cfg;
  const Waveform y = istft(stft(x, cfg), cfg, x.size());
  double err = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) err = std::max(err, std::abs(x[i] - y[i]));
  report(1, "STFT/ISTFT perfect reconstruction", err < 1e-6,
         "max err " + fmt(err) + " < 1e-6");
}

void criterion_crm_round_trip() {
  const Waveform clean = synth_utterance(2.0, 16000, 5);
  Rng rng(6);
  Waveform noisy = clean;
  for (double& v : noisy) v += 0.5 * rng.normal();
  const StftConfig cfg;
  const auto S = stft(clean, cfg), Y = stft(noisy, cfg);
  const auto R = apply_mask(Y, ideal_crm(Y, S));
  double err = 0.0;
  for (std::size_t i = 0; i < S.v.size(); ++i)
    err = std::max(err, std::abs(R.v[i] - S.v[i]));
  const Waveform w = istft(R, cfg, clean.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    err = std::max(err, std::abs(w[i] - clean[i]));
  report(2, "ideal complex mask round trip", err < 1e-6, "max err " + fmt(err) + " < 1e-6");
}

void criterion_loss_gradients() {
  double worst = 0.0;
  auto rel = [](double an, double fd) {
    return std::abs(an - fd) / std::max({1e-6, std::abs(an), std::abs(fd)});
  };

  // Spatial terms on an 8x8 time-frequency grid.
  const int K = 8, L = 8;
  const auto cl = random_spec(K, L, 41), cr = random_spec(K, L, 42);
  BinaryMask m(K, L);
  Rng rng(43);
  for (auto& b : m.v) b = rng.uniform() < 0.7 ? 1 : 0;
  const ad::Tensor mw = mask_weights(m);
  std::vector<ad::Tensor> st = {spec_to_tensor(random_spec(K, L, 44)),
                                spec_to_tensor(random_spec(K, L, 45))};
  for (bool ipd : {false, true}) {
    auto build = [&](ad::Graph& g, std::vector<ad::Var>& v) {
      return ipd ? ipd_term_graph(g, v[0], v[1], cl, cr, mw)
                 : ild_term_graph(g, v[0], v[1], cl, cr, mw);
    };
    auto eval = [&]() {
      ad::Graph g;
      std::vector<ad::Var> leaves = {g.leaf(st[0]), g.leaf(st[1])};
      return build(g, leaves)->val.item();
    };
    ad::Graph g;
    std::vector<ad::Var> leaves = {g.leaf(st[0]), g.leaf(st[1])};
    g.backward(build(g, leaves));
    for (std::size_t s = 0; s < st.size(); ++s)
      for (std::size_t i = 0; i < st[s].v.size(); ++i)
        worst = std::max(worst, rel(leaves[s]->grad.v[i], ad::finite_diff(st[s], i, eval)));
  }

  // Time-domain SNR term through the ISTFT, 8 frames of an 8-bin analysis.
  StftConfig small;
  small.fft_length = 16;
  small.window_length = 16;
  small.hop_length = 8;
  const std::size_t n = 56;
  Rng rng2(51);
  Waveform clean(n), noisy(n);
  for (std::size_t i = 0; i < n; ++i) {
    clean[i] = rng2.normal();
    noisy[i] = clean[i] + 0.3 * rng2.normal();
  }
  ad::Tensor snt = spec_to_tensor(stft(noisy, small));
  auto eval_snr = [&]() {
    ad::Graph g;
    return snr_graph(g, g.leaf(snt), clean, small, 16000)->val.item();
  };
  ad::Graph g;
  auto leaf = g.leaf(snt);
  g.backward(snr_graph(g, leaf, clean, small, 16000));
  for (std::size_t i = 0; i < snt.v.size(); ++i)
    worst = std::max(worst, rel(leaf->grad.v[i], ad::finite_diff(snt, i, eval_snr)));

  report(3, "loss gradients match finite differences", worst < 1e-4,
         "max rel err " + fmt(worst) + " < 1e-4");
}

void criterion_complex_algebra() {
  // Complex convolution against direct std::complex arithmetic.
  const int ci = 2, F = 9, T = 6, co = 3, kf = 5, stride = 2, pad = 2;
  const ad::Tensor xr = random_tensor({ci, F, T}, 1), xi = random_tensor({ci, F, T}, 2);
  const ad::Tensor wr = random_tensor({co, ci, kf, 1}, 3),
                   wi = random_tensor({co, ci, kf, 1}, 4);
  ad::Graph g;
  CVar y = complex_conv(g, {g.leaf(xr, false), g.leaf(xi, false)},
                        {g.leaf(wr, false), g.leaf(wi, false)}, stride, pad);
  const int fo = (F + 2 * pad - kf) / stride + 1;
  double err = 0.0;
  for (int oc = 0; oc < co; ++oc)
    for (int f = 0; f < fo; ++f)
      for (int t = 0; t < T; ++t) {
        std::complex<double> acc = 0.0;
        for (int c = 0; c < ci; ++c)
          for (int j = 0; j < kf; ++j) {
            const int fi = f * stride - pad + j;
            if (fi < 0 || fi >= F) continue;
            const std::size_t xo = (static_cast<std::size_t>(c) * F + fi) * T + t;
            const std::size_t wo = (static_cast<std::size_t>(oc) * ci + c) * kf + j;
            acc += std::complex<double>(xr.v[xo], xi.v[xo]) *
                   std::complex<double>(wr.v[wo], wi.v[wo]);
          }
        const std::size_t yo = (static_cast<std::size_t>(oc) * fo + f) * T + t;
        err = std::max(err, std::abs(y.re->val.v[yo] - acc.real()));
        err = std::max(err, std::abs(y.im->val.v[yo] - acc.imag()));
      }

  // Complex mask application against direct std::complex arithmetic.
  const int K = 17, L = 5;
  const ComplexSpectrogram noisy = random_spec(K, L, 7);
  const ad::Tensor mask = random_tensor({2, K, L}, 8);
  ad::Graph g2;
  auto enh = complex_apply_mask(g2, g2.leaf(mask, false), noisy);
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < L; ++l) {
      const std::size_t mi = static_cast<std::size_t>(k) * L + l;
      const std::complex<double> mv(mask.v[mi], mask.v[mi + std::size_t(K) * L]);
      const std::complex<double> ref = mv * noisy(k, l);
      err = std::max(err, std::abs(enh->val.v[mi] - ref.real()));
      err = std::max(err, std::abs(enh->val.v[mi + std::size_t(K) * L] - ref.imag()));
    }
  report(4, "complex algebra matches std::complex oracles", err < 1e-5,
         "max err " + fmt(err) + " < 1e-5");
}

void criterion_analytic_cues() {
  const int K = 3, L = 1;
  ComplexSpectrogram right = random_spec(K, L, 9);
  for (auto& v : right.v) v += std::complex<double>(2.0, 0.0);  // keep off the floor

  // Left ear twice the right: ILD = 20 log10 2 everywhere.
  ComplexSpectrogram left = right;
  for (auto& v : left.v) v *= 2.0;
  double err = 0.0;
  for (double v : ild_map(left, right).values.v)
    err = std::max(err, std::abs(v - 20.0 * std::log10(2.0)));

  // Left ear rotated by j: IPD = pi/2 everywhere.
  ComplexSpectrogram rotated = right;
  for (auto& v : rotated.v) v *= std::complex<double>(0.0, 1.0);
  for (double v : ipd_map(rotated, right).values.v)
    err = std::max(err, std::abs(v - kPi / 2.0));

  // Per-row 20 dB threshold: energies 0 / -10 / -30 dB give mask 1,1,0.
  Matrix e(1, 3);
  e.v = {0.0, -10.0, -30.0};
  const BinaryMask mask = ibm(e, 20.0);
  const bool mask_ok = mask.v[0] == 1 && mask.v[1] == 1 && mask.v[2] == 0;
  report(5, "analytic interaural cues and speech mask", err < 1e-9 && mask_ok,
         "max cue err " + fmt(err) + " < 1e-9, mask " + std::to_string(mask.v[0]) +
             std::to_string(mask.v[1]) + std::to_string(mask.v[2]) + " == 110");
}

void criterion_parameter_count() {
  const Model m{ModelConfig{}};
  const double count = static_cast<double>(m.param_count());
  report(6, "default model size near ten million parameters",
         count > 8e6 && count < 1.2e7, std::to_string(m.param_count()) + " in (8e6, 1.2e7)");
}

void criterion_stoi_sanity() {
  const Waveform s = synth_utterance(2.0, 16000, 21);
  const double self = stoi(s, s, 16000);
  bool ok = std::abs(self - 1.0) < 1e-8;

  double rms = 0.0;
  for (double v : s) rms += v * v;
  rms = std::sqrt(rms / static_cast<double>(s.size()));
  Rng rng(22);
  Waveform unit_noise(s.size());
  for (double& v : unit_noise) v = rng.normal();

  std::string trace;
  double prev = 2.0;
  for (double snr_db : {20.0, 10.0, 0.0, -10.0}) {
    const double scale = rms * std::pow(10.0, -snr_db / 20.0);
    Waveform noisy = s;
    for (std::size_t i = 0; i < s.size(); ++i) noisy[i] += scale * unit_noise[i];
    const double score = stoi(s, noisy, 16000);
    ok = ok && score < prev;
    prev = score;
    trace += (trace.empty() ? "" : " > ") + fmt(score);
  }
  report(7, "intelligibility score sanity", ok,
         "self " + fmt(self) + ", decreasing over SNR: " + trace);
}

void criterion_isotropic_coherence() {
  const HeadModelConfig cfg;
  const HrirSet set = make_synthetic_hrirs(cfg, 16000);
  const auto n = isotropic_noise(10.0, NoiseType::Wgn, set, 7);

  const int nfft = 512, hop = 256, bins = nfft / 2 + 1;
  std::vector<double> pll(bins, 0.0), prr(bins, 0.0);
  std::vector<std::complex<double>> plr(bins, 0.0);
  std::vector<double> buf(nfft);
  std::vector<std::complex<double>> sl(bins), sr(bins);
  for (std::size_t start = 0; start + nfft <= n.left.size(); start += hop) {
    for (int i = 0; i < nfft; ++i)
      buf[i] = n.left[start + i] * 0.5 * (1.0 - std::cos(2.0 * kPi * i / nfft));
    rfft_into(buf.data(), nfft, sl.data());
    for (int i = 0; i < nfft; ++i)
      buf[i] = n.right[start + i] * 0.5 * (1.0 - std::cos(2.0 * kPi * i / nfft));
    rfft_into(buf.data(), nfft, sr.data());
    for (int k = 0; k < bins; ++k) {
      pll[k] += std::norm(sl[k]);
      prr[k] += std::norm(sr[k]);
      plr[k] += sl[k] * std::conj(sr[k]);
    }
  }
  // Mean ring delay of the spherical-head model matches a free-field pair at
  // an effective spacing of about 2.44 head radii.
  const double d_eff = 2.44 * cfg.head_radius;
  double worst = 0.0;
  for (int k = 1; k < bins; ++k) {
    const double f = k * 16000.0 / nfft;
    if (f >= 1500.0) break;
    const double coh2 = std::norm(plr[k]) / (pll[k] * prr[k]);
    const double j0 = std::cyl_bessel_j(0.0, 2.0 * kPi * f * d_eff / cfg.speed_of_sound);
    worst = std::max(worst, std::abs(coh2 - j0 * j0));
  }
  report(8, "isotropic field coherence follows the Bessel model", worst < 0.15,
         "max |MSC - J0^2| " + fmt(worst) + " < 0.15 below 1.5 kHz");
}

void criterion_causality() {
  Model m{tiny_config(), 10};
  const int T = 10, t0 = 6;
  const ad::Tensor nl = random_tensor({2, 257, T}, 61), nr = random_tensor({2, 257, T}, 62);
  ad::Graph g;
  const auto base = m.forward(g, nl, nr, false);

  ad::Tensor nl2 = nl, nr2 = nr;
  for (int k = 0; k < 257; ++k)
    for (int p = 0; p < 2; ++p) {
      nl2.v[(static_cast<std::size_t>(p) * 257 + k) * T + t0] += 3.0;
      nr2.v[(static_cast<std::size_t>(p) * 257 + k) * T + t0] -= 2.0;
    }
  ad::Graph g2;
  const auto mod = m.forward(g2, nl2, nr2, false);
  double err = 0.0;
  for (int p = 0; p < 2; ++p)
    for (int k = 0; k < 257; ++k)
      for (int t = 0; t < t0; ++t) {
        const std::size_t i = (static_cast<std::size_t>(p) * 257 + k) * T + t;
        err = std::max(err, std::abs(mod.mask_l->val.v[i] - base.mask_l->val.v[i]));
        err = std::max(err, std::abs(mod.mask_r->val.v[i] - base.mask_r->val.v[i]));
      }
  report(10, "masks are causal in time", err < 1e-12,
         "max past-frame change " + fmt(err) + " < 1e-12 after perturbing frame " +
             std::to_string(t0));
}

struct EvalMeans {
  double delta_fw = 0.0;
  double ild = 0.0;
  double ipd = 0.0;
  double stoi_win_frac = 0.0;
  int n = 0;
};

EvalMeans eval_means(const EvalReport& r) {
  EvalMeans m;
  for (const auto& rec : r.records) {
    m.delta_fw += rec.delta_fw_segsnr_db;
    m.ild += rec.ild_err_db;
    m.ipd += rec.ipd_err_deg;
    if (rec.stoi_enhanced > rec.stoi_noisy) m.stoi_win_frac += 1.0;
    ++m.n;
  }
  if (m.n > 0) {
    m.delta_fw /= m.n;
    m.ild /= m.n;
    m.ipd /= m.n;
    m.stoi_win_frac /= m.n;
  }
  return m;
}

void criterion_training() {
  const auto t_start = std::chrono::steady_clock::now();
  std::vector<std::string> files;
  for (int i = 0; i < 12; ++i) files.push_back("synth:" + std::to_string(1000 + i));

  BuildConfig bc;
  bc.count = 200;
  bc.snr_lo_db = -6.0;
  bc.snr_hi_db = 6.0;
  const DatasetManifest manifest = build_dataset(files, bc, 99);
  const SceneRenderer renderer(make_synthetic_hrirs(HeadModelConfig{}, 16000), 2.0, 16000);

  TrainConfig tc;
  tc.epochs = 12;
  tc.batch_size = 8;
  tc.seed = 99;
  tc.initial_lr = 0.003;  // the small model tolerates a hotter start
  const StftConfig sc;

  const fs::path root = fs::temp_directory_path() / "bse_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  // Full objective.
  Model full{tiny_config(), 100};
  const TrainResult full_res =
      train(manifest, renderer, full, tc, sc, (root / "full").string());

  // Signal-term-only ablation for the spatial-cue comparison.
  TrainConfig tc_snr = tc;
  tc_snr.weights = LossWeights{1.0, 0.0, 0.0, 0.0};
  Model snr_only{tiny_config(), 100};
  const TrainResult snr_res =
      train(manifest, renderer, snr_only, tc_snr, sc, (root / "snr_only").string());

  // Score the best (lowest validation loss) checkpoint of each run, not the
  // weights left in memory after the final epoch.
  std::optional<Model> full_best, snr_best;
  load_checkpoint(full_res.best_checkpoint, full_best);
  load_checkpoint(snr_res.best_checkpoint, snr_best);
  const EvalMeans mf =
      eval_means(evaluate_manifest(manifest, "test", renderer, *full_best, sc, {-6, 0, 6}));
  const EvalMeans ms =
      eval_means(evaluate_manifest(manifest, "test", renderer, *snr_best, sc, {-6, 0, 6}));

  const double initial = full_res.history.initial_val.total;
  const double drop = (initial - full_res.history.best_val_loss) / std::abs(initial);
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count() /
      60.0;

  report(9, "desk-scale training improves the objective and the metrics",
         drop >= 0.30 && mf.delta_fw > 3.0 && mf.ild < ms.ild && mf.ipd < ms.ipd &&
             mf.stoi_win_frac >= 0.70,
         "val drop " + fmt(100.0 * drop) + "% >= 30%, dfwSegSNR " + fmt(mf.delta_fw) +
             " dB > 3, ILD err " + fmt(mf.ild) + " < " + fmt(ms.ild) + ", IPD err " +
             fmt(mf.ipd) + " < " + fmt(ms.ipd) + " deg, STOI wins " +
             fmt(100.0 * mf.stoi_win_frac) + "% >= 70% of " + std::to_string(mf.n) +
             " held-out scenes, " + fmt(minutes) + " min");
  fs::remove_all(root);
}

}  // namespace

int main() {
  criterion_stft_reconstruction();
  criterion_crm_round_trip();
  criterion_loss_gradients();
  criterion_complex_algebra();
  criterion_analytic_cues();
  criterion_parameter_count();
  criterion_stoi_sanity();
  criterion_isotropic_coherence();
  criterion_causality();
  criterion_training();
  std::printf("%d of 10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
