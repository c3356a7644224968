"""Multichannel WAV I/O, per-second annotations and one-second blocking.

Samples are held channel-major as float64 arrays of shape ``(channels, n)``.
Integer PCM is rescaled to [-1, 1) by dividing by ``2 ** (bits - 1)``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

LABEL_NAMES = ("speech_front", "speech_back", "something_else")


class WavError(ValueError):
    """Base class for WAV parsing failures."""


class WavFormatError(WavError):
    """Malformed RIFF/WAVE structure."""


class WavUnsupportedError(WavError):
    """Valid container, but a codec or sample width we do not decode."""


class WavLengthError(WavError):
    """Data chunk shorter than its header claims."""


class AlignmentError(ValueError):
    """Annotation count does not match the audio duration."""


@dataclass(frozen=True)
class LabelSet:
    speech_front: bool = False
    speech_back: bool = False
    something_else: bool = False

    @property
    def speech(self) -> bool:
        return self.speech_front or self.speech_back

    def as_tuple(self) -> tuple[int, int, int]:
        return (int(self.speech_front), int(self.speech_back), int(self.something_else))

    @classmethod
    def from_iterable(cls, values: Iterable) -> "LabelSet":
        front, back, other = (bool(int(v)) for v in values)
        return cls(front, back, other)

    def union(self, other: "LabelSet") -> "LabelSet":
        return LabelSet(
            self.speech_front or other.speech_front,
            self.speech_back or other.speech_back,
            self.something_else or other.something_else,
        )


@dataclass
class MultichannelRecording:
    sample_rate: int
    samples: np.ndarray  # (channels, n)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples))
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 2:
            raise ValueError("samples must be (channels, n)")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate


@dataclass
class AudioBlock:
    block_index: int
    samples: np.ndarray  # (channels, sample_rate)
    labels: LabelSet
    sample_rate: int
    recording_id: str = ""


# --------------------------------------------------------------------------
# WAV reading / writing


def _parse_fmt(body: bytes) -> tuple[int, int, int, int]:
    if len(body) < 16:
        raise WavFormatError(f"fmt chunk too short ({len(body)} bytes)")
    fmt_tag, channels, rate, _byte_rate, block_align, bits = struct.unpack("<HHIIHH", body[:16])
    if fmt_tag == WAVE_FORMAT_EXTENSIBLE:
        if len(body) < 40:
            raise WavFormatError("WAVE_FORMAT_EXTENSIBLE fmt chunk too short")
        # first two bytes of the subformat GUID carry the actual format tag
        fmt_tag = struct.unpack("<H", body[24:26])[0]
    if channels == 0:
        raise WavFormatError("zero channels")
    if rate == 0:
        raise WavFormatError("zero sample rate")
    if bits == 0 or bits % 8:
        raise WavUnsupportedError(f"unsupported bits per sample: {bits}")
    if block_align != channels * bits // 8:
        raise WavFormatError(f"block_align {block_align} inconsistent with {channels}ch x {bits}bit")
    return fmt_tag, channels, rate, bits


def _decode(raw: bytes, fmt_tag: int, bits: int) -> np.ndarray:
    if fmt_tag == WAVE_FORMAT_IEEE_FLOAT:
        if bits == 32:
            return np.frombuffer(raw, dtype="<f4").astype(np.float64)
        if bits == 64:
            return np.frombuffer(raw, dtype="<f8").astype(np.float64)
        raise WavUnsupportedError(f"float WAV with {bits} bits")
    if fmt_tag != WAVE_FORMAT_PCM:
        raise WavUnsupportedError(f"unsupported WAV format tag 0x{fmt_tag:04x}")
    if bits == 8:
        return (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if bits == 16:
        ints = np.frombuffer(raw, dtype="<i2")
    elif bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
    elif bits == 32:
        ints = np.frombuffer(raw, dtype="<i4")
    else:
        raise WavUnsupportedError(f"PCM with {bits} bits")
    return ints.astype(np.float64) / float(1 << (bits - 1))


def read_wav(path) -> MultichannelRecording:
    """Read a RIFF/WAVE file (PCM 8/16/24/32-bit or IEEE float 32/64-bit)."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    raw = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < size:
                raise WavFormatError(f"{path}: truncated fmt chunk")
            fmt = _parse_fmt(body)
        elif chunk_id == b"data":
            if fmt is None:
                raise WavFormatError(f"{path}: data chunk before fmt chunk")
            if len(body) < size:
                raise WavLengthError(f"{path}: data chunk claims {size} bytes, {len(body)} present")
            raw = body
            break
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if raw is None:
        raise WavFormatError(f"{path}: missing data chunk")

    fmt_tag, channels, rate, bits = fmt
    frame_bytes = channels * bits // 8
    if len(raw) % frame_bytes:
        raise WavLengthError(f"{path}: data length {len(raw)} not a multiple of frame size {frame_bytes}")
    flat = _decode(raw, fmt_tag, bits)
    return MultichannelRecording(rate, flat.reshape(-1, channels).T.copy())


def write_wav(path, rec: MultichannelRecording, sample_format: str = "float32") -> None:
    """Write ``rec`` as ``pcm16``, ``pcm32`` or ``float32``."""
    x = np.asarray(rec.samples, dtype=np.float64).T  # (n, channels)
    if sample_format == "float32":
        payload = x.astype("<f4").tobytes()
        fmt_tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
    elif sample_format in ("pcm16", "pcm32"):
        bits = 16 if sample_format == "pcm16" else 32
        scale = float(1 << (bits - 1))
        ints = np.clip(np.round(x * scale), -scale, scale - 1)
        payload = ints.astype("<i2" if bits == 16 else "<i4").tobytes()
        fmt_tag = WAVE_FORMAT_PCM
    else:
        raise WavUnsupportedError(f"unknown sample format {sample_format!r}")

    channels = rec.channels
    block_align = channels * bits // 8
    fmt_body = struct.pack("<HHIIHH", fmt_tag, channels, rec.sample_rate,
                           rec.sample_rate * block_align, block_align, bits)
    chunks = b"fmt " + struct.pack("<I", len(fmt_body)) + fmt_body
    if fmt_tag == WAVE_FORMAT_IEEE_FLOAT:
        # non-PCM formats carry a fact chunk with the frame count
        chunks += b"fact" + struct.pack("<II", 4, x.shape[0])
    chunks += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        chunks += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks)


# --------------------------------------------------------------------------
# Annotations

ANNOTATION_HEADER = ("recording_id", "second_index") + LABEL_NAMES


def write_annotations(path, annotations: dict[str, Sequence[LabelSet]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_HEADER)
        for rec_id in sorted(annotations):
            for second, labels in enumerate(annotations[rec_id]):
                w.writerow((rec_id, second) + labels.as_tuple())


def read_annotations(path) -> dict[str, list[LabelSet]]:
    """Parse the per-second annotation CSV into ``{recording_id: [LabelSet, ...]}``."""
    rows: dict[str, dict[int, LabelSet]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or (lineno == 1 and row[0] == "recording_id"):
                continue
            if len(row) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            rec_id, second = row[0], int(row[1])
            values = [int(v) for v in row[2:]]
            if any(v not in (0, 1) for v in values):
                raise ValueError(f"{path}:{lineno}: label values must be 0 or 1")
            per_rec = rows.setdefault(rec_id, {})
            if second in per_rec:
                raise ValueError(f"{path}:{lineno}: duplicate second {second} for {rec_id}")
            per_rec[second] = LabelSet.from_iterable(values)

    out = {}
    for rec_id, per_rec in rows.items():
        if sorted(per_rec) != list(range(len(per_rec))):
            raise ValueError(f"{path}: seconds for {rec_id} are not contiguous from 0")
        out[rec_id] = [per_rec[s] for s in range(len(per_rec))]
    return out


# --------------------------------------------------------------------------
# Preprocessing


def downmix_and_normalize(rec: MultichannelRecording) -> tuple[np.ndarray, bool]:
    """Average channels, then divide by the peak magnitude.

    Returns ``(mono, silent)``. A silent (all-zero) mix is returned as zeros
    with ``silent=True`` instead of being divided.
    """
    if rec.channels < 1:
        raise ValueError("recording has no channels")
    mono = rec.samples.mean(axis=0)
    peak = np.max(np.abs(mono)) if mono.size else 0.0
    if peak == 0.0:
        return np.zeros_like(mono), True
    return mono / peak, False


def segment_blocks(rec: MultichannelRecording, annotations: Sequence[LabelSet],
                   recording_id: str = "") -> list[AudioBlock]:
    """Cut ``rec`` into one-second blocks; the trailing partial second is dropped."""
    n_seconds = rec.num_samples // rec.sample_rate
    if len(annotations) != n_seconds:
        raise AlignmentError(
            f"{recording_id or 'recording'}: {len(annotations)} annotations for "
            f"{n_seconds} whole seconds of audio"
        )
    sr = rec.sample_rate
    return [
        AudioBlock(i, rec.samples[:, i * sr:(i + 1) * sr], labels, sr, recording_id)
        for i, labels in enumerate(annotations)
    ]
