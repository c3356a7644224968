import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from seld_kit.spectral import (LOG_FLOOR, StftConfig, fit_standardizer, frame_count, hz_to_mel, load_features,
                               log_mel, log_mel_block, mel_band_centers, mel_filterbank, save_features,
                               stft_magnitude)


def test_mel_of_700_hz():
    assert float(hz_to_mel(700.0)) == pytest.approx(2595 * math.log10(2))
    assert float(hz_to_mel(700.0)) == pytest.approx(781.17, abs=5e-3)


def test_block_frame_counts():
    cfg = StftConfig()
    assert (cfg.frame_length, cfg.hop_length) == (960, 480)
    assert frame_count(48000, 960, 480) == 99
    assert stft_magnitude(np.zeros(48000)).shape == (99, 513)
    assert frame_count(48000, 4080, 2040) == 22


@given(st.integers(1, 5000), st.integers(1, 300), st.integers(1, 300))
def test_frame_count_formula(extra, frame, hop):
    n = frame + extra
    assert frame_count(n, frame, hop) == len(range(0, n - frame + 1, hop))


def test_stft_against_direct_dft():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(2000)
    cfg = StftConfig(frame_ms=2.0, hop_ms=1.0, fft_size=128)  # 96-sample frames
    mag = stft_magnitude(x, cfg)
    n = np.arange(96)
    win = 0.5 - 0.5 * np.cos(2 * np.pi * n / 96)
    k = np.arange(65)[:, None]
    basis = np.exp(-2j * np.pi * k * n[None] / 128)
    for t in (0, 5, mag.shape[0] - 1):
        seg = x[t * 48:t * 48 + 96] * win
        np.testing.assert_allclose(mag[t], np.abs(basis @ seg), rtol=1e-9, atol=1e-9)


def test_sine_peak_bin():
    t = np.arange(48000) / 48000
    mag = stft_magnitude(np.sin(2 * np.pi * 1000 * t))
    assert set(np.argmax(mag, axis=1)) == {round(1000 * 1024 / 48000)}
    assert not stft_magnitude(np.zeros(48000)).any()


def test_stft_too_short_raises():
    with pytest.raises(ValueError):
        stft_magnitude(np.zeros(100))


def test_filterbank_against_loop_oracle():
    fb = mel_filterbank(8, 100.0, 6000.0, 256, 16000)
    m_lo, m_hi = 2595 * math.log10(1 + 100 / 700), 2595 * math.log10(1 + 6000 / 700)
    edges = [700 * (10 ** ((m_lo + i * (m_hi - m_lo) / 9) / 2595) - 1) for i in range(10)]
    for b in range(8):
        for k in range(129):
            f = k * 16000 / 256
            lo, c, hi = edges[b], edges[b + 1], edges[b + 2]
            w = (f - lo) / (c - lo) if lo <= f <= c else (hi - f) / (hi - c) if c < f <= hi else 0.0
            assert fb[b, k] == pytest.approx(max(w, 0.0), abs=1e-12)


def test_filterbank_properties():
    fb = mel_filterbank()
    centers = mel_band_centers(40, 0, 24000)
    assert fb.shape == (40, 513) and (fb >= 0).all()
    assert np.all(np.diff(centers) > 0)
    freqs = np.arange(513) * 48000 / 1024
    inside = (freqs >= centers[0]) & (freqs <= centers[-1])
    assert (fb[:, inside].sum(axis=0) > 0).all()
    # each filter peaks at the FFT bin nearest its centre
    for b in range(5, 40):
        assert abs(freqs[np.argmax(fb[b])] - centers[b]) <= 48000 / 1024


@pytest.mark.parametrize("args", [dict(n_bands=0), dict(fmin=5000, fmax=4000), dict(fmax=30000)])
def test_filterbank_rejects_bad_ranges(args):
    with pytest.raises(ValueError):
        mel_filterbank(**args)


def test_log_mel_identities():
    assert log_mel(np.array([[2.0]]), np.array([[1.0]]))[0, 0] == pytest.approx(math.log(4 + 1e-10))
    assert np.all(log_mel(np.zeros((3, 513)), mel_filterbank()) == np.log(LOG_FLOOR))
    x = np.random.default_rng(1).standard_normal(48000)
    np.testing.assert_allclose(log_mel_block(2 * x) - log_mel_block(x), math.log(4), atol=1e-6)


@given(arrays(np.float64, (4, 7, 3), elements=st.floats(-1e3, 1e3)))
def test_standardizer_moments(pool):
    s = fit_standardizer(list(pool), provenance=("r1",))
    z = s.apply(pool).reshape(-1, 3)
    raw = pool.reshape(-1, 3)
    varying = raw.std(axis=0) > 1e-3
    assert np.all(np.abs(z.mean(axis=0)[varying]) < 1e-6)
    np.testing.assert_allclose(z.var(axis=0)[varying], 1.0, atol=1e-4)
    constant = np.ptp(raw, axis=0) == 0
    assert not z[:, constant].any()
    assert s.provenance == ("r1",)


def test_standardizer_examples():
    s = fit_standardizer([np.array([[0.0], [2.0]])])
    np.testing.assert_array_equal(s.apply(np.array([[0.0], [2.0]])), [[-1.0], [1.0]])
    const = fit_standardizer([np.full((5, 2), 3.0)])
    assert not const.apply(np.full((5, 2), 3.0)).any()
    with pytest.raises(ValueError):
        fit_standardizer([])


def test_feature_cache_round_trip(tmp_path):
    x = np.random.default_rng(2).standard_normal((3, 99, 40)).astype(np.float32)
    save_features(tmp_path / "f.f32", x, {"config_hash": "abc"})
    back, meta = load_features(tmp_path / "f.f32", {"config_hash": "abc"})
    np.testing.assert_array_equal(back, x)
    assert meta["shape"] == [3, 99, 40]
    with pytest.raises(ValueError):
        load_features(tmp_path / "f.f32", {"config_hash": "other"})
