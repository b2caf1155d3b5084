#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "bse/corpus.hpp"
#include "bse/cues.hpp"
#include "bse/losses.hpp"
#include "bse/rng.hpp"
#include "bse/stoi.hpp"

using namespace bse;
namespace ad = bse::ad;

namespace {
constexpr double kPi = 3.14159265358979323846;

ComplexSpectrogram random_spec(int k, int l, std::uint64_t seed, double lo = 0.3) {
  Rng rng(seed);
  ComplexSpectrogram S(k, l);
  for (auto& v : S.v) {
    // keep magnitudes away from zero so cue kinks stay clear of the FD step
    const double mag = lo + rng.uniform();
    const double ph = 2.0 * kPi * rng.uniform() - kPi;
    v = std::polar(mag, ph);
  }
  return S;
}

BinauralWaveform noisy_pair(const BinauralWaveform& clean, double snr_db,
                            std::uint64_t seed) {
  Rng rng(seed);
  BinauralWaveform out = clean;
  for (Waveform* ch : {&out.left, &out.right}) {
    double ps = 0.0;
    for (double s : *ch) ps += s * s;
    Waveform noise(ch->size());
    double pn = 0.0;
    for (double& x : noise) {
      x = rng.normal();
      pn += x * x;
    }
    const double g = std::sqrt(ps / pn * std::pow(10.0, -snr_db / 10.0));
    for (std::size_t i = 0; i < ch->size(); ++i) (*ch)[i] += g * noise[i];
  }
  return out;
}

BinauralWaveform utterance_pair(double seconds, std::uint64_t seed) {
  BinauralWaveform w;
  w.sample_rate = 16000;
  w.left = synth_utterance(seconds, 16000, seed);
  w.right = synth_utterance(seconds, 16000, seed);  // diotic clean reference
  for (std::size_t i = 0; i < w.right.size(); ++i) w.right[i] *= 0.9;
  return w;
}

}  // namespace

TEST_CASE("snr examples and errors") {
  Waveform s(1000);
  Rng rng(1);
  for (double& x : s) x = rng.normal();

  CHECK(snr(s, s) == doctest::Approx(50.0));

  Waveform s_hat = s;
  for (double& x : s_hat) x *= 1.1;  // error energy = ||s||^2 / 100
  CHECK(snr(s, s_hat) == doctest::Approx(20.0).epsilon(1e-12));

  Waveform zero(s.size(), 0.0);
  CHECK(snr(s, zero) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS(snr(zero, s));                    // silent reference
  CHECK_THROWS(snr(s, Waveform(999, 0.0)));      // length mismatch
  CHECK(snr(s, s, 30.0) == doctest::Approx(30.0));
}

TEST_CASE("snr_loss is the negated ear mean") {
  BinauralWaveform clean = utterance_pair(0.5, 3);
  CHECK(snr_loss(clean, clean) == doctest::Approx(-50.0));

  BinauralWaveform enh = clean;
  for (double& x : enh.left) x *= 1.1;                       // 20 dB
  const double g = 1.0 + std::pow(10.0, -0.5);
  for (double& x : enh.right) x *= g;                        // 10 dB
  CHECK(snr_loss(clean, enh) == doctest::Approx(-15.0).epsilon(1e-12));

  BinauralWaveform silent = clean;
  std::fill(silent.left.begin(), silent.left.end(), 0.0);
  std::fill(silent.right.begin(), silent.right.end(), 0.0);
  CHECK(snr_loss(clean, silent) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("stoi_loss equals negated mean of per-ear smooth scores") {
  BinauralWaveform clean = utterance_pair(1.0, 5);
  BinauralWaveform enh = noisy_pair(clean, 5.0, 6);
  const double dl = stoi(clean.left, enh.left, 16000, StoiMode::Smooth);
  const double dr = stoi(clean.right, enh.right, 16000, StoiMode::Smooth);
  CHECK(stoi_loss(clean, enh) == doctest::Approx(-0.5 * (dl + dr)).epsilon(1e-12));
  CHECK(stoi_loss(clean, clean) == doctest::Approx(-1.0).epsilon(5e-3));
  CHECK(stoi_loss(clean, enh) >= -1.0);
  CHECK(stoi_loss(clean, enh) <= 0.0);
}

TEST_CASE("ild_loss examples") {
  auto cl = random_spec(6, 5, 11), cr = random_spec(6, 5, 12);
  BinaryMask all(6, 5);
  for (auto& b : all.v) b = 1;

  CHECK(ild_loss(cl, cr, cl, cr, all) == doctest::Approx(0.0));

  auto er = cr;
  for (auto& v : er.v) v *= 2.0;
  CHECK(ild_loss(cl, cr, cl, er, all) == doctest::Approx(6.0205999).epsilon(1e-6));

  // brute-force oracle on a random case with a random mask
  auto el = random_spec(6, 5, 13), er2 = random_spec(6, 5, 14);
  BinaryMask m(6, 5);
  Rng rng(15);
  for (auto& b : m.v) b = rng.uniform() < 0.5 ? 1 : 0;
  double acc = 0.0;
  std::size_t n = 0;
  for (int k = 0; k < 6; ++k)
    for (int l = 0; l < 5; ++l) {
      if (!m(k, l)) continue;
      const double c = 20.0 * std::log10(std::abs(cl(k, l)) / std::abs(cr(k, l)));
      const double e = 20.0 * std::log10(std::abs(el(k, l)) / std::abs(er2(k, l)));
      acc += std::abs(c - e);
      ++n;
    }
  CHECK(ild_loss(cl, cr, el, er2, m) == doctest::Approx(acc / n).epsilon(1e-12));

  bool empty = false;
  BinaryMask none(6, 5);
  CHECK(ild_loss(cl, cr, el, er2, none, &empty) == 0.0);
  CHECK(empty);
}

TEST_CASE("ipd_loss examples and wrap convention") {
  auto cl = random_spec(4, 4, 21), cr = random_spec(4, 4, 22);
  BinaryMask all(4, 4);
  for (auto& b : all.v) b = 1;

  CHECK(ipd_loss(cl, cr, cl, cr, all) == doctest::Approx(0.0));

  auto el = cl;
  const std::complex<double> rot = std::polar(1.0, kPi / 4.0);
  for (auto& v : el.v) v *= rot;
  CHECK(ipd_loss(cl, cr, el, cr, all) == doctest::Approx(kPi / 4.0).epsilon(1e-12));

  // wrap boundary: clean IPD pi-0.1 vs enhanced -pi+0.1 is 0.2 apart
  ComplexSpectrogram c1(1, 1), c2(1, 1), e1(1, 1), e2(1, 1);
  c1(0, 0) = std::polar(1.0, kPi - 0.1);
  c2(0, 0) = 1.0;
  e1(0, 0) = std::polar(1.0, -kPi + 0.1);
  e2(0, 0) = 1.0;
  BinaryMask one(1, 1);
  one(0, 0) = 1;
  CHECK(ipd_loss(c1, c2, e1, e2, one) == doctest::Approx(0.2).epsilon(1e-9));

  bool empty = false;
  BinaryMask none(4, 4);
  CHECK(ipd_loss(cl, cr, el, cr, none, &empty) == 0.0);
  CHECK(empty);
}

TEST_CASE("composite_loss examples and linearity") {
  BinauralWaveform clean = utterance_pair(1.0, 31);
  LossWeights w;
  StftConfig cfg;

  LossBreakdown perfect = composite_loss(clean, clean, w, cfg);
  CHECK(perfect.snr_term == doctest::Approx(-50.0));
  CHECK(perfect.ild_term == doctest::Approx(0.0));
  CHECK(perfect.ipd_term == doctest::Approx(0.0));
  CHECK(perfect.total == doctest::Approx(-60.0).epsilon(1e-3));

  BinauralWaveform enh = noisy_pair(clean, 8.0, 32);
  LossBreakdown b = composite_loss(clean, enh, w, cfg);
  CHECK(b.total == doctest::Approx(w.alpha * b.snr_term + w.beta * b.stoi_term +
                                   w.gamma * b.ild_term + w.kappa * b.ipd_term)
                       .epsilon(1e-9));

  LossWeights snr_only{1.0, 0.0, 0.0, 0.0};
  LossBreakdown b2 = composite_loss(clean, enh, snr_only, cfg);
  CHECK(b2.total == doctest::Approx(b2.snr_term).epsilon(1e-12));
  CHECK(b2.stoi_term == doctest::Approx(b.stoi_term));  // still reported

  LossWeights gamma2 = w;
  gamma2.gamma *= 2.0;
  LossBreakdown b3 = composite_loss(clean, enh, gamma2, cfg);
  CHECK(b3.total - b.total == doctest::Approx(w.gamma * b.ild_term).epsilon(1e-9));
}

TEST_CASE("ild and ipd graph gradients match finite differences on 8x8") {
  const int K = 8, L = 8;
  auto cl = random_spec(K, L, 41), cr = random_spec(K, L, 42);
  BinaryMask m(K, L);
  Rng rng(43);
  for (auto& b : m.v) b = rng.uniform() < 0.7 ? 1 : 0;
  REQUIRE(m.count() > 0);
  const ad::Tensor mw = mask_weights(m);

  std::vector<ad::Tensor> st = {spec_to_tensor(random_spec(K, L, 44)),
                                spec_to_tensor(random_spec(K, L, 45))};

  for (bool ipd : {false, true}) {
    CAPTURE(ipd);
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
    auto loss = build(g, leaves);
    g.backward(loss);
    for (std::size_t s = 0; s < st.size(); ++s)
      for (std::size_t i = 0; i < st[s].v.size(); ++i) {
        const double fd = ad::finite_diff(st[s], i, eval);
        const double an = leaves[s]->grad.v[i];
        CHECK(std::abs(an - fd) / std::max({1e-6, std::abs(an), std::abs(fd)}) < 1e-4);
      }
  }
}

TEST_CASE("snr graph gradient matches finite differences on a small spectrogram") {
  StftConfig cfg;
  cfg.fft_length = 16;
  cfg.window_length = 16;
  cfg.hop_length = 8;
  const std::size_t n = 56;  // 8 frames
  Rng rng(51);
  Waveform clean(n), noisy(n);
  for (std::size_t i = 0; i < n; ++i) {
    clean[i] = rng.normal();
    noisy[i] = clean[i] + 0.3 * rng.normal();
  }
  ad::Tensor st = spec_to_tensor(stft(noisy, cfg));

  auto eval = [&]() {
    ad::Graph g;
    return snr_graph(g, g.leaf(st), clean, cfg, 16000)->val.item();
  };
  ad::Graph g;
  auto leaf = g.leaf(st);
  auto loss = snr_graph(g, leaf, clean, cfg, 16000);
  g.backward(loss);
  for (std::size_t i = 0; i < st.v.size(); ++i) {
    const double fd = ad::finite_diff(st, i, eval);
    const double an = leaf->grad.v[i];
    CHECK(std::abs(an - fd) / std::max({1e-6, std::abs(an), std::abs(fd)}) < 1e-4);
  }
}

TEST_CASE("graph composite matches the scalar path on resynthesized audio") {
  BinauralWaveform clean = utterance_pair(1.0, 61);
  BinauralWaveform noisy = noisy_pair(clean, 4.0, 62);
  StftConfig cfg;
  LossWeights w;

  const auto cl = stft(clean.left, cfg), cr = stft(clean.right, cfg);
  const auto nl = stft(noisy.left, cfg), nr = stft(noisy.right, cfg);

  // scalar path on the ISTFT resynthesis the graph also sees
  BinauralWaveform resynth;
  resynth.sample_rate = 16000;
  resynth.left = istft(nl, cfg, clean.length());
  resynth.right = istft(nr, cfg, clean.length());
  LossBreakdown ref = composite_loss(clean, resynth, w, cfg);

  ad::Graph g;
  auto sl = g.leaf(spec_to_tensor(nl));
  auto sr = g.leaf(spec_to_tensor(nr));
  LossTerms t = composite_loss_graph(g, sl, sr, cl, cr, clean, w, cfg);
  CHECK(t.snr_term->val.item() == doctest::Approx(ref.snr_term).epsilon(1e-9));
  CHECK(t.stoi_term->val.item() == doctest::Approx(ref.stoi_term).epsilon(1e-9));
  CHECK(t.ild_term->val.item() == doctest::Approx(ref.ild_term).epsilon(1e-9));
  CHECK(t.ipd_term->val.item() == doctest::Approx(ref.ipd_term).epsilon(1e-9));
  CHECK(t.total->val.item() == doctest::Approx(ref.total).epsilon(1e-9));
  CHECK_FALSE(t.empty_mask);

  g.backward(t.total);
  double gnorm = 0.0;
  for (double x : sl->grad.v) gnorm += x * x;
  CHECK(gnorm > 0.0);  // gradient reaches the enhanced spectrogram
}
