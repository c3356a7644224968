"""Stage-1 spectral features: framed STFT magnitudes, log-mel energies, standardization."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

LOG_FLOOR = 1e-10
STD_FLOOR = 1e-8
FEATURE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class StftConfig:
    frame_ms: float = 20.0
    hop_ms: float = 10.0
    fft_size: int = 1024
    sample_rate: int = 48000
    n_bands: int = 40
    fmin: float = 0.0
    fmax: float = 24000.0

    @property
    def frame_length(self) -> int:
        n = self.frame_ms * self.sample_rate / 1000
        if abs(n - round(n)) > 1e-9:
            raise ValueError(f"{self.frame_ms} ms is not a whole number of samples at {self.sample_rate} Hz")
        return int(round(n))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))

    def digest(self) -> str:
        return config_digest(asdict(self))


def config_digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, frame: int, hop: int) -> int:
    return (n_samples - frame) // hop + 1


def frame_signal(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    """(..., n) -> (..., frames, frame); frame t covers ``[t*hop, t*hop + frame)``."""
    x = np.asarray(x)
    if x.shape[-1] < frame:
        raise ValueError(f"signal of {x.shape[-1]} samples is shorter than one frame ({frame})")
    windows = np.lib.stride_tricks.sliding_window_view(x, frame, axis=-1)
    return windows[..., ::hop, :]


def stft_magnitude(x: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Hann-windowed magnitude spectrogram, shape ``(frames, fft_size // 2 + 1)``."""
    frame = cfg.frame_length
    if cfg.fft_size < frame:
        raise ValueError("fft_size must be at least the frame length")
    frames = frame_signal(np.asarray(x, dtype=np.float64), frame, cfg.hop_length)
    return np.abs(np.fft.rfft(frames * hann(frame), n=cfg.fft_size, axis=-1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_centers(n_bands: int, fmin: float, fmax: float) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_bands + 2))
    return edges[1:-1]


def mel_filterbank(n_bands: int = 40, fmin: float = 0.0, fmax: float = 24000.0,
                   fft_size: int = 1024, sample_rate: int = 48000) -> np.ndarray:
    """Triangular filters with unit peaks, shape ``(n_bands, fft_size // 2 + 1)``."""
    if n_bands < 1:
        raise ValueError(f"n_bands must be positive, got {n_bands}")
    if not (0 <= fmin < fmax <= sample_rate / 2):
        raise ValueError(f"need 0 <= fmin < fmax <= {sample_rate / 2}, got [{fmin}, {fmax}]")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_bands + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def filterbank_for(cfg: StftConfig) -> np.ndarray:
    return mel_filterbank(cfg.n_bands, cfg.fmin, cfg.fmax, cfg.fft_size, cfg.sample_rate)


def log_mel(mag: np.ndarray, fb: np.ndarray) -> np.ndarray:
    """Natural log of power-domain mel energies: ``ln(fb @ mag**2 + 1e-10)``."""
    return np.log(np.asarray(mag) ** 2 @ fb.T + LOG_FLOOR)


def log_mel_block(mono: np.ndarray, cfg: StftConfig = StftConfig(), fb: np.ndarray | None = None) -> np.ndarray:
    fb = filterbank_for(cfg) if fb is None else fb
    return log_mel(stft_magnitude(mono, cfg), fb)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    provenance: tuple = field(default_factory=tuple)  # recording ids the stats came from

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std],
                "provenance": list(self.provenance)}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   tuple(d.get("provenance", ())))


def fit_standardizer(train_features, provenance=()) -> Standardizer:
    """Per-band mean/std over every frame of every training matrix."""
    mats = [np.asarray(f, dtype=np.float64) for f in train_features]
    if not mats:
        raise ValueError("cannot fit a standardizer on an empty training set")
    pool = np.concatenate([m.reshape(-1, m.shape[-1]) for m in mats], axis=0)
    mean = pool.mean(axis=0)
    # exact mean for constant bands, where rounding would be amplified by the std floor
    mean = np.where(np.ptp(pool, axis=0) == 0, pool[0], mean)
    std = np.maximum(pool.std(axis=0), STD_FLOOR)
    return Standardizer(mean, std, tuple(provenance))


def apply_standardizer(features: np.ndarray, s: Standardizer) -> np.ndarray:
    return s.apply(features)


# --------------------------------------------------------------------------
# Feature cache: raw little-endian float32 payload + JSON sidecar


def save_features(path, array: np.ndarray, meta: dict | None = None) -> None:
    path = Path(path)
    array = np.ascontiguousarray(array, dtype="<f4")
    path.write_bytes(array.tobytes())
    sidecar = {"format_version": FEATURE_FORMAT_VERSION, "shape": list(array.shape), "dtype": "float32le"}
    sidecar.update(meta or {})
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_features(path, expect: dict | None = None) -> tuple[np.ndarray, dict]:
    """Load a cached feature array; ``expect`` entries must match the sidecar."""
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    if meta.get("format_version") != FEATURE_FORMAT_VERSION:
        raise ValueError(f"{path}: feature format version {meta.get('format_version')} "
                         f"!= {FEATURE_FORMAT_VERSION}")
    for key, value in (expect or {}).items():
        if meta.get(key) != value:
            raise ValueError(f"{path}: sidecar {key}={meta.get(key)!r}, expected {value!r}")
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    shape = tuple(meta["shape"])
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: payload has {data.size} values, sidecar shape {shape}")
    return data.reshape(shape).copy(), meta
