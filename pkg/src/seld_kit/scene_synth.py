"""Synthetic labeled scenes for a phone-shaped 8-microphone array.

Sources are far-field plane waves arriving from the front (+z) or back (-z)
half-space. Each microphone receives the source delayed by its projection on
the arrival direction; microphones on the surface facing away from the source
get a flat shadowing loss. Independent white noise per channel forms the floor.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.fft import next_fast_len

from .audio_io import LabelSet, MultichannelRecording

SPEED_OF_SOUND = 343.0
SIGNAL_KINDS = ("noise", "tone", "speech")
SIDES = ("front", "back")
RENDER_MARGIN = 256


def _default_mic_positions(body_dims=(0.140, 0.065, 0.007), inset=0.010):
    hx = body_dims[0] / 2 - inset
    hy = body_dims[1] / 2 - inset
    hz = body_dims[2] / 2
    return [
        (-hx, hy, hz),    # 1 front left
        (hx, hy, hz),     # 2 front right
        (-hx, hy, -hz),   # 3 back left
        (hx, hy, -hz),    # 4 back right
        (-hx, -hy, hz),   # 5-8: remaining corners, unused by the features
        (hx, -hy, hz),
        (-hx, -hy, -hz),
        (hx, -hy, -hz),
    ]


@dataclass
class ArrayGeometry:
    mic_positions: list = field(default_factory=_default_mic_positions)
    body_dims: tuple = (0.140, 0.065, 0.007)

    def __post_init__(self):
        self.mic_positions = [tuple(float(c) for c in p) for p in self.mic_positions]
        self.body_dims = tuple(float(d) for d in self.body_dims)
        if any(len(p) != 3 for p in self.mic_positions):
            raise ValueError("mic positions must be (x, y, z) triples")

    @property
    def positions(self) -> np.ndarray:
        return np.asarray(self.mic_positions, dtype=np.float64)

    @property
    def num_mics(self) -> int:
        return len(self.mic_positions)

    def to_json(self) -> str:
        return json.dumps({"mic_positions": [list(p) for p in self.mic_positions],
                           "body_dims": list(self.body_dims)}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ArrayGeometry":
        d = json.loads(text)
        return cls(d.get("mic_positions") or _default_mic_positions(), d.get("body_dims", (0.140, 0.065, 0.007)))


@dataclass
class SourceSpec:
    signal_kind: str
    azimuth_side: str
    level_db: float
    onset_s: float
    offset_s: float
    angle_deg: float = 0.0  # tilt off the front/back axis, in the x-z plane

    @property
    def labels(self) -> LabelSet:
        if self.signal_kind == "speech":
            return LabelSet(speech_front=self.azimuth_side == "front",
                            speech_back=self.azimuth_side == "back")
        return LabelSet(something_else=True)


@dataclass
class SceneSpec:
    sources: list = field(default_factory=list)
    noise_floor_db: float = -60.0
    duration_s: float = 10.0
    seed: int = 0
    sample_rate: int = 48000
    shadow_db: float = 6.0
    scene_kind: str = "indoor"

    def __post_init__(self):
        self.sources = [s if isinstance(s, SourceSpec) else SourceSpec(**s) for s in self.sources]

    def validate(self) -> list[str]:
        problems = []
        if self.duration_s <= 0:
            problems.append(f"duration_s must be > 0 (got {self.duration_s})")
        if self.sample_rate <= 0:
            problems.append(f"sample_rate must be > 0 (got {self.sample_rate})")
        for i, s in enumerate(self.sources):
            if s.signal_kind not in SIGNAL_KINDS:
                problems.append(f"sources[{i}].signal_kind must be one of {SIGNAL_KINDS}")
            if s.azimuth_side not in SIDES:
                problems.append(f"sources[{i}].azimuth_side must be one of {SIDES}")
            if not (0 <= s.onset_s < s.offset_s <= self.duration_s):
                problems.append(f"sources[{i}]: need 0 <= onset < offset <= duration")
        return problems

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_json(Path(path).read_text())


def delayed_copies(x: np.ndarray, delays) -> np.ndarray:
    """Rows of ``x`` delayed by each entry of ``delays`` (samples), one FFT shared by all."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    delays = np.atleast_1d(np.asarray(delays, dtype=np.float64))
    if np.any(np.abs(delays) >= n):
        raise ValueError(f"|delay| must be smaller than the signal length ({n})")
    spec = np.fft.rfft(x)
    k = np.arange(spec.shape[-1])
    phase = np.exp(-2j * np.pi * np.outer(delays, k) / n)
    if n % 2 == 0:
        phase[:, -1] = np.cos(np.pi * delays)
    return np.fft.irfft(spec * phase, n=n, axis=-1)


def fractional_delay(x: np.ndarray, delay: float) -> np.ndarray:
    """Delay ``x`` by ``delay`` samples with a frequency-domain phase shift.

    The signal is treated as periodic. The Nyquist bin (even lengths) keeps
    only the real part of its shifted value.
    """
    x = np.asarray(x, dtype=np.float64)
    if delay == 0:
        if x.shape[-1] == 0:
            raise ValueError("empty signal")
        return x.copy()
    return delayed_copies(x, [delay])[0]


def arrival_direction(side: str, angle_deg: float = 0.0) -> np.ndarray:
    a = np.deg2rad(angle_deg)
    z = np.cos(a) if side == "front" else -np.cos(a)
    return np.array([np.sin(a), 0.0, z])


def mic_delays(geom: ArrayGeometry, direction: np.ndarray, sample_rate: int,
               c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Plane-wave arrival delay (samples) of each mic relative to the body centre."""
    return -(geom.positions @ direction) / c * sample_rate


# --------------------------------------------------------------------------
# Source signals


def _band_noise(rng, n, fs, lo, hi, order=4):
    sos = sps.butter(order, [lo, min(hi, 0.49 * fs)], btype="bandpass", fs=fs, output="sos")
    return sps.sosfilt(sos, rng.standard_normal(n))


def _tilted_noise(rng, n, fs, lo, hi, tilt_db_per_octave=-3.0, knee=500.0):
    """White noise shaped in the frequency domain: band-passed, sloping above ``knee``."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / fs)
    gain = np.where((f >= lo) & (f <= hi), 1.0, 0.0)
    gain *= 10 ** (tilt_db_per_octave * np.log2(np.maximum(f, knee) / knee) / 20)
    return np.fft.irfft(spec * gain, n=n)


def _speech_like(rng, n, fs):
    t = np.arange(n) / fs
    carrier = _tilted_noise(rng, n, fs, 100.0, 16000.0) + 0.7 * _band_noise(rng, n, fs, 300.0, 3000.0)
    rate = rng.uniform(3.0, 6.0)
    syll = np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)) ** 2
    phrase = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.3, 0.8) * t + rng.uniform(0, 2 * np.pi))
    return carrier * (0.2 + 0.8 * syll) * phrase


def _tone(rng, n, fs):
    out = np.zeros(n)
    pos = 0
    while pos < n:
        length = min(n - pos, int(rng.uniform(0.15, 0.4) * fs))
        tt = np.arange(length) / fs
        f0 = rng.uniform(400.0, 2000.0)
        note = sum(np.sin(2 * np.pi * f0 * h * tt) / h for h in (1, 2, 3))
        out[pos:pos + length] = note * np.exp(-tt * rng.uniform(3.0, 8.0))
        pos += length
    return out


def _noise_bursts(rng, n, fs):
    base = _band_noise(rng, n, fs, 3000.0, 14000.0)
    env = np.full(n, 0.15)
    for start in rng.integers(0, max(n - 1, 1), size=max(1, int(3 * n / fs))):
        tail = np.exp(-np.arange(n - start) / fs * rng.uniform(6.0, 15.0))
        env[start:] += tail
    return base * env


_GENERATORS = {"speech": _speech_like, "tone": _tone, "noise": _noise_bursts}


def source_signal(kind: str, n: int, fs: int, rng: np.random.Generator, level_db: float) -> np.ndarray:
    """Dry source waveform of ``n`` samples scaled to ``level_db`` dBFS RMS."""
    x = _GENERATORS[kind](rng, n, fs)
    fade = min(n // 2, int(0.005 * fs))
    if fade > 0:
        ramp = np.linspace(0.0, 1.0, fade)
        x[:fade] *= ramp
        x[-fade:] *= ramp[::-1]
    rms = np.sqrt(np.mean(x ** 2))
    if rms > 0:
        x *= 10 ** (level_db / 20) / rms
    return x


def second_labels(spec: SceneSpec) -> list[LabelSet]:
    """Per-second labels: a source marks every second its active span overlaps."""
    n_seconds = int(np.floor(spec.duration_s + 1e-9))
    labels = [LabelSet() for _ in range(n_seconds)]
    for s in spec.sources:
        for sec in range(n_seconds):
            if min(s.offset_s, sec + 1) - max(s.onset_s, sec) > 0:
                labels[sec] = labels[sec].union(s.labels)
    return labels


def render_scene(spec: SceneSpec, geom: ArrayGeometry | None = None,
                 c: float = SPEED_OF_SOUND) -> tuple[MultichannelRecording, list[LabelSet]]:
    """Render ``spec`` on ``geom``; deterministic for a fixed ``spec.seed``."""
    geom = geom or ArrayGeometry()
    problems = spec.validate()
    if problems:
        raise ValueError("invalid scene spec: " + "; ".join(problems))

    fs = spec.sample_rate
    n = int(round(spec.duration_s * fs))
    seeds = np.random.SeedSequence(spec.seed).spawn(len(spec.sources) + 1)
    floor_rng = np.random.default_rng(seeds[0])
    out = floor_rng.standard_normal((geom.num_mics, n)) * 10 ** (spec.noise_floor_db / 20)

    pos_z = geom.positions[:, 2]
    shadow_gain = 10 ** (-spec.shadow_db / 20)
    for src, seed in zip(spec.sources, seeds[1:]):
        rng = np.random.default_rng(seed)
        start = int(round(src.onset_s * fs))
        stop = int(round(src.offset_s * fs))
        dry = source_signal(src.signal_kind, stop - start, fs, rng, src.level_db)

        direction = arrival_direction(src.azimuth_side, src.angle_deg)
        delays = mic_delays(geom, direction, fs, c)
        gains = np.where(pos_z * direction[2] < 0, shadow_gain, 1.0)
        # zero margin keeps the periodic shift from wrapping the source edges
        pad = RENDER_MARGIN + int(np.ceil(np.max(np.abs(delays))))
        right = next_fast_len(len(dry) + 2 * pad, real=True) - len(dry) - pad
        wet = delayed_copies(np.pad(dry, (pad, right)), delays) * gains[:, None]
        lo, hi = start - pad, stop + right
        out[:, max(lo, 0):min(hi, n)] += wet[:, max(0, -lo):wet.shape[1] - max(0, hi - n)]

    return MultichannelRecording(fs, out), second_labels(spec)


# --------------------------------------------------------------------------
# Random corpus specs

_SEGMENT_MIX = (
    # (front speech, back speech, something else), probability
    ((0, 0, 0), 0.16),
    ((1, 0, 0), 0.22),
    ((0, 1, 0), 0.22),
    ((1, 1, 0), 0.10),
    ((0, 0, 1), 0.16),
    ((1, 0, 1), 0.07),
    ((0, 1, 1), 0.07),
)


def random_scene_spec(rng: np.random.Generator, duration_s: int = 20, scene_kind: str = "indoor",
                      seed: int = 0) -> SceneSpec:
    """Draw a scene whose content changes on whole-second boundaries."""
    combos = [c for c, _ in _SEGMENT_MIX]
    probs = np.array([p for _, p in _SEGMENT_MIX])
    probs /= probs.sum()
    floor_db = -55.0 if scene_kind == "indoor" else -48.0
    sources = []
    t = 0
    while t < duration_s:
        length = int(min(duration_s - t, rng.integers(1, 5)))
        front, back, other = combos[rng.choice(len(combos), p=probs)]
        if front:
            sources.append(SourceSpec("speech", "front", float(rng.uniform(-30, -20)), t, t + length,
                                      float(rng.uniform(-30, 30))))
        if back:
            sources.append(SourceSpec("speech", "back", float(rng.uniform(-30, -20)), t, t + length,
                                      float(rng.uniform(-30, 30))))
        if other:
            sources.append(SourceSpec(str(rng.choice(["noise", "tone"])), str(rng.choice(SIDES)),
                                      float(rng.uniform(-32, -22)), t, t + length))
        t += length
    return SceneSpec(sources=sources, noise_floor_db=floor_db, duration_s=float(duration_s),
                     seed=seed, scene_kind=scene_kind)
