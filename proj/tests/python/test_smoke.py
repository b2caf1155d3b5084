import numpy as np
import pytest

try:
    import _core as bse  # build-tree module (PYTHONPATH set by ctest)
except ImportError:  # installed package
    bse = pytest.importorskip("bse")


def test_synth_utterance_deterministic():
    a = bse.synth_utterance(0.5, 16000, seed=42)
    b = bse.synth_utterance(0.5, 16000, seed=42)
    c = bse.synth_utterance(0.5, 16000, seed=43)
    assert a.shape == (8000,)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.max(np.abs(a)) > 0


def test_stft_istft_round_trip():
    x = bse.synth_utterance(1.0, 16000, seed=7)
    spec = bse.stft(x)
    assert spec.shape[0] == 257
    assert spec.dtype == np.complex128
    y = bse.istft(spec, len(x))
    assert np.max(np.abs(x - y)) < 1e-6


def test_stoi_self_and_noise_ordering():
    clean = bse.synth_utterance(1.0, 16000, seed=3)
    assert bse.stoi(clean, clean) == pytest.approx(1.0, abs=1e-8)
    rng = np.random.default_rng(0)
    noisy = clean + 0.5 * rng.standard_normal(len(clean))
    assert bse.stoi(clean, noisy) < bse.stoi(clean, clean + 0.01 * rng.standard_normal(len(clean)))


def test_fw_segsnr_ceiling():
    clean = bse.synth_utterance(1.0, 16000, seed=9)
    assert bse.fw_segsnr(clean, clean) == pytest.approx(35.0)
    assert bse.fw_segsnr(clean, 0.5 * clean) < 35.0


def test_better_ear_stoi_takes_the_max():
    clean = bse.synth_utterance(1.0, 16000, seed=11)
    rng = np.random.default_rng(1)
    bad = clean + 1.0 * rng.standard_normal(len(clean))
    score = bse.better_ear_stoi(clean, clean, clean, bad)
    assert score == pytest.approx(bse.stoi(clean, clean), abs=1e-12)
