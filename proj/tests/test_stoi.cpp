#include <doctest.h>

#include <cmath>
#include <vector>

#include "bse/corpus.hpp"
#include "bse/rng.hpp"
#include "bse/stoi.hpp"

using namespace bse;

namespace {

Waveform add_noise_at_snr(const Waveform& s, double snr_db, std::uint64_t seed) {
  Rng rng(seed);
  Waveform noise(s.size());
  double ps = 0.0, pn = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    noise[i] = rng.normal();
    ps += s[i] * s[i];
    pn += noise[i] * noise[i];
  }
  const double g = std::sqrt(ps / pn * std::pow(10.0, -snr_db / 10.0));
  Waveform out = s;
  for (std::size_t i = 0; i < s.size(); ++i) out[i] += g * noise[i];
  return out;
}

}  // namespace

TEST_CASE("band matrix covers 15 contiguous nonempty bands") {
  Matrix B = stoi_detail::band_matrix();
  REQUIRE(B.rows == 15);
  int prev_hi = 0;
  for (int b = 0; b < B.rows; ++b) {
    int lo = -1, hi = -1;
    for (int i = 0; i < B.cols; ++i)
      if (B(b, i) != 0.0) {
        if (lo < 0) lo = i;
        hi = i;
      }
    REQUIRE(lo >= 0);  // every band holds at least one bin
    CHECK(lo > prev_hi - 1);
    for (int i = lo; i <= hi; ++i) CHECK(B(b, i) == 1.0);  // contiguous
    prev_hi = hi;
  }
}

TEST_CASE("identical signals score 1") {
  Waveform s = synth_utterance(2.0, 16000, 7);
  CHECK(stoi(s, s, 16000, StoiMode::Eval) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(stoi(s, s, 16000, StoiMode::Smooth) == doctest::Approx(1.0).epsilon(2e-3));
}

TEST_CASE("score decreases strictly as mixing SNR drops") {
  Waveform s = synth_utterance(2.0, 16000, 11);
  double prev = 1.1;
  for (double snr : {20.0, 10.0, 0.0, -10.0}) {
    const double d = stoi(s, add_noise_at_snr(s, snr, 99), 16000, StoiMode::Eval);
    CHECK(d < prev);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    prev = d;
  }
}

TEST_CASE("unrelated noise scores below 0.3") {
  Waveform s = synth_utterance(2.0, 16000, 13);
  Rng rng(5);
  Waveform wgn(s.size());
  for (double& x : wgn) x = rng.normal();
  CHECK(stoi(s, wgn, 16000, StoiMode::Eval) < 0.3);
}

TEST_CASE("eval mode rejects too-short input") {
  Waveform s(3000, 0.1);
  CHECK_THROWS(stoi(s, s, 16000, StoiMode::Eval));
}

TEST_CASE("silence removal drops quiet frames and keeps loud content") {
  Waveform loud = synth_utterance(1.0, 10000, 17);
  Waveform padded(loud.size() * 2, 1e-7);
  std::copy(loud.begin(), loud.end(), padded.begin());
  Waveform a, b;
  stoi_detail::remove_silent_frames(padded, padded, a, b);
  CHECK(a.size() < padded.size());
  CHECK(a.size() >= loud.size() / 2);
  CHECK(a == b);  // same frames kept for both signals
}

TEST_CASE("graph score matches the smooth-mode scalar path") {
  Waveform s = synth_utterance(1.0, 16000, 19);
  Waveform p = add_noise_at_snr(s, 5.0, 23);
  ad::Graph g;
  auto leaf = g.leaf(ad::Tensor::from(p, {static_cast<int>(p.size())}), false);
  auto d = stoi_score_graph(g, leaf, s, 16000);
  CHECK(d->val.item() == doctest::Approx(stoi(s, p, 16000, StoiMode::Smooth)).epsilon(1e-12));
}

TEST_CASE("graph score gradient matches finite differences") {
  const int fs = 16000;
  Waveform s = synth_utterance(0.6, fs, 29);
  Waveform p = add_noise_at_snr(s, 3.0, 31);
  auto storage = ad::Tensor::from(p, {static_cast<int>(p.size())});

  auto eval = [&]() {
    ad::Graph g;
    auto leaf = g.leaf(storage);
    return stoi_score_graph(g, leaf, s, fs)->val.item();
  };

  ad::Graph g;
  auto leaf = g.leaf(storage);
  auto d = stoi_score_graph(g, leaf, s, fs);
  g.backward(d);

  Rng rng(37);
  for (int trial = 0; trial < 24; ++trial) {
    const std::size_t i = rng.below(storage.v.size());
    const double fd = ad::finite_diff(storage, i, eval, 1e-5);
    const double an = leaf->grad.v[i];
    CHECK(std::abs(an - fd) / std::max({1e-6, std::abs(an), std::abs(fd)}) < 1e-4);
  }
}
