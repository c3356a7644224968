"""Stage-2 spatial features for front/back discrimination.

Per 85 ms frame and per front/back microphone pair (1,3) and (2,4):

* TDOA: peak lag of a Fourier-interpolated GCC, searched only over the lags
  that the 7 mm front/back separation makes physically possible.
* Magnitude difference: ``ln M_i(b) - ln M_j(b)`` over 40 magnitude mel bands.

Both are averaged over the two pairs, giving a ``frames x 41`` matrix.
Positive TDOA means mic ``i`` (front) leads mic ``j`` (back).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .scene_synth import SPEED_OF_SOUND
from .spectral import LOG_FLOOR, Standardizer, config_digest, frame_signal, hann, mel_filterbank

_TINY = 1e-20


@dataclass(frozen=True)
class LocFrameConfig:
    frame_ms: float = 85.0
    overlap: float = 0.5
    fft_size: int = 4096
    interp_factor: int = 5
    pairs: tuple = ((0, 2), (1, 3))  # zero-based mic indices: (1,3) and (2,4)
    mic_separation: float = 0.007
    speed_of_sound: float = SPEED_OF_SOUND
    sample_rate: int = 48000
    n_bands: int = 40
    fmin: float = 0.0
    fmax: float = 24000.0
    phat: bool = True
    average_gcc: bool = False

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(tuple(int(m) for m in p) for p in self.pairs))

    @property
    def frame_length(self) -> int:
        return int(round(self.frame_ms * self.sample_rate / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.frame_length * (1.0 - self.overlap)))

    @property
    def max_lag_samples(self) -> int:
        return math.ceil(self.mic_separation / self.speed_of_sound * self.sample_rate)

    @property
    def max_lag_interp(self) -> int:
        return self.interp_factor * self.max_lag_samples

    @property
    def lags(self) -> np.ndarray:
        """Interpolated lags covered by the GCC output."""
        return np.arange(-self.max_lag_interp, self.max_lag_interp + 1)

    @property
    def n_features(self) -> int:
        return 1 + self.n_bands

    def digest(self) -> str:
        return config_digest(asdict(self))


def feasible_integer_lags(cfg: LocFrameConfig) -> list[int]:
    """Integer sample lags reachable by a wave crossing the front/back separation."""
    return list(range(-cfg.max_lag_samples, cfg.max_lag_samples + 1))


def _gcc_from_spectra(X: np.ndarray, Y: np.ndarray, cfg: LocFrameConfig, phat: bool | None = None) -> np.ndarray:
    phat = cfg.phat if phat is None else phat
    cross = np.conj(X) * Y
    if phat:
        mag = np.abs(cross)
        cross = np.where(mag > _TINY, cross / np.maximum(mag, _TINY), 0.0)
    cc = np.fft.irfft(cross, n=cfg.fft_size * cfg.interp_factor, axis=-1)
    L = cfg.max_lag_interp
    return np.concatenate([cc[..., -L:], cc[..., :L + 1]], axis=-1) if L else cc[..., :1]


def gcc_interpolated(x: np.ndarray, y: np.ndarray, cfg: LocFrameConfig = LocFrameConfig(),
                     phat: bool | None = None) -> np.ndarray:
    """Interpolated GCC between frames ``x`` (mic i) and ``y`` (mic j).

    Returns ``2 * max_lag_interp + 1`` values for lags ``cfg.lags``; the peak is
    at a positive lag when ``y`` is a delayed copy of ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"frame shapes differ: {x.shape} vs {y.shape}")
    n = max(cfg.fft_size, x.shape[-1])
    X = np.fft.rfft(x, n=n, axis=-1)
    Y = np.fft.rfft(y, n=n, axis=-1)
    if n != cfg.fft_size:
        cfg = LocFrameConfig(**{**asdict(cfg), "fft_size": n})
    return _gcc_from_spectra(X, Y, cfg, phat)


def peak_lag(cc: np.ndarray, cfg: LocFrameConfig) -> tuple[np.ndarray, np.ndarray]:
    """Argmax lag of each GCC curve plus a confidence mask (False for flat curves)."""
    cc = np.asarray(cc)
    lags = np.asarray(cfg.lags)[np.argmax(cc, axis=-1)]
    flat = (cc.max(axis=-1) - cc.min(axis=-1)) <= 1e-12 * np.maximum(1.0, np.abs(cc).max(axis=-1))
    return np.where(flat, 0, lags), ~flat


def _samples(block) -> np.ndarray:
    return np.asarray(getattr(block, "samples", block), dtype=np.float64)


def _pair_spectra(block, cfg: LocFrameConfig):
    samples = _samples(block)
    mics = sorted({m for pair in cfg.pairs for m in pair})
    if samples.shape[0] <= max(mics):
        raise ValueError(f"need mics {[m + 1 for m in mics]}, block has {samples.shape[0]} channels")
    frames = frame_signal(samples[mics], cfg.frame_length, cfg.hop_length)
    spectra = np.fft.rfft(frames * hann(cfg.frame_length), n=cfg.fft_size, axis=-1)
    return {m: spectra[k] for k, m in enumerate(mics)}


def _tdoa_from_spectra(spec: dict, cfg: LocFrameConfig):
    curves = np.stack([_gcc_from_spectra(spec[i], spec[j], cfg) for i, j in cfg.pairs])
    if cfg.average_gcc:
        return peak_lag(curves.mean(axis=0), cfg)
    lags, conf = peak_lag(curves, cfg)
    return lags.mean(axis=0), conf.all(axis=0)


def tdoa_feature(block, cfg: LocFrameConfig = LocFrameConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Pair-averaged per-frame TDOA in interpolated samples, plus a confidence mask.

    Silent frames give a flat GCC; their TDOA is reported as 0 and marked
    not confident.
    """
    return _tdoa_from_spectra(_pair_spectra(block, cfg), cfg)


def _magnitude_difference_from_spectra(spec: dict, cfg: LocFrameConfig, fb: np.ndarray) -> np.ndarray:
    diffs = []
    for i, j in cfg.pairs:
        mi = np.abs(spec[i]) @ fb.T
        mj = np.abs(spec[j]) @ fb.T
        diffs.append(np.log(mi + LOG_FLOOR) - np.log(mj + LOG_FLOOR))
    return np.mean(diffs, axis=0)


def loc_filterbank(cfg: LocFrameConfig) -> np.ndarray:
    return mel_filterbank(cfg.n_bands, cfg.fmin, cfg.fmax, cfg.fft_size, cfg.sample_rate)


def mel_magnitude_difference(block, cfg: LocFrameConfig = LocFrameConfig(),
                             fb: np.ndarray | None = None) -> np.ndarray:
    """Pair-averaged log magnitude-mel difference, shape ``(frames, n_bands)``."""
    fb = loc_filterbank(cfg) if fb is None else fb
    return _magnitude_difference_from_spectra(_pair_spectra(block, cfg), cfg, fb)


def assemble_spatial(block, cfg: LocFrameConfig = LocFrameConfig(), standardizer: Standardizer | None = None,
                     fb: np.ndarray | None = None) -> np.ndarray:
    """``[TDOA | D]`` per frame, ``(frames, 1 + n_bands)``, optionally standardized."""
    fb = loc_filterbank(cfg) if fb is None else fb
    spec = _pair_spectra(block, cfg)
    tdoa, _ = _tdoa_from_spectra(spec, cfg)
    feats = np.concatenate([np.asarray(tdoa, dtype=np.float64)[:, None],
                            _magnitude_difference_from_spectra(spec, cfg, fb)], axis=1)
    return standardizer.apply(feats) if standardizer is not None else feats
