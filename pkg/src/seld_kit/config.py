"""Experiment configuration: one JSON document, validated field by field.

Relative paths resolve against the directory of the config file, so a config
copied next to its data reproduces the same run (and the same config hash).
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from pathlib import Path

from .neural.model import crnn_architecture
from .spatial import LocFrameConfig
from .spectral import StftConfig
from .training import STAGE_LABELS, TrainConfig

CONFIG_VERSION = 1
ARTIFACT_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(problems))
        self.problems = problems


DEFAULTS = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "rotation": 0,
    "threads": 1,
    "paths": {"data_root": "corpus", "output_dir": "out", "manifest": None},
    "synth": {"n_scenes": 36, "duration_s": 20},
    "features": {"stft": {}, "loc": {}},
    "models": {
        "1": {"conv_filters": [64, 96], "lstm_units": [64]},
        "2": {"conv_filters": [32, 48], "lstm_units": [48]},
        "flat": {"conv_filters": [64, 96], "lstm_units": [64]},
    },
    "training": {"1": {}, "2": {}, "flat": {}},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class ExperimentConfig:
    def __init__(self, data: dict, base_dir: Path | str = "."):
        self.data = _merge(DEFAULTS, data)
        self.base_dir = Path(base_dir)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError([f"config file {path} not found"]) from None
        except json.JSONDecodeError as err:
            raise ConfigError([f"{path}: not valid JSON ({err})"]) from None
        cfg = cls(_merge(data, overrides or {}), path.parent)
        cfg.validate()
        return cfg

    # ----------------------------------------------------------------------

    def validate(self) -> None:
        d = self.data
        problems = []
        if d.get("version") != CONFIG_VERSION:
            problems.append(f"version: expected {CONFIG_VERSION}, got {d.get('version')!r}")
        if not isinstance(d.get("seed"), int):
            problems.append(f"seed: must be an integer, got {d.get('seed')!r}")
        if not isinstance(d.get("rotation"), int) or not 0 <= d["rotation"] < 6:
            problems.append(f"rotation: must be an integer in [0, 6), got {d.get('rotation')!r}")
        if not isinstance(d.get("threads"), int) or d["threads"] < 1:
            problems.append(f"threads: must be a positive integer, got {d.get('threads')!r}")
        for key in ("stft", "loc"):
            try:
                self._feature_config(key)
            except (TypeError, ValueError) as err:
                problems.append(f"features.{key}: {err}")
        for stage in STAGE_LABELS:
            m = d["models"].get(stage, {})
            for field in ("conv_filters", "lstm_units"):
                vals = m.get(field)
                if not isinstance(vals, list) or not all(isinstance(v, int) and v > 0 for v in vals):
                    problems.append(f"models.{stage}.{field}: must be a list of positive integers")
            if not m.get("lstm_units"):
                problems.append(f"models.{stage}.lstm_units: at least one LSTM layer is required")
            try:
                tc = self.train_config(stage)
                problems += [f"training.{stage}: {p}" for p in tc.validate()]
            except TypeError as err:
                problems.append(f"training.{stage}: {err}")
        paths = d["paths"]
        for key in ("data_root", "output_dir"):
            if not isinstance(paths.get(key), str) or not paths[key]:
                problems.append(f"paths.{key}: must be a non-empty string")
        if problems:
            raise ConfigError(problems)

    def require_corpus(self) -> None:
        problems = []
        root = self.data_root
        for name in ("annotations.csv",):
            if not (root / name).exists():
                problems.append(f"paths.data_root: {root / name} does not exist")
        if not self.manifest_path.exists():
            problems.append(f"paths.manifest: {self.manifest_path} does not exist")
        if problems:
            raise ConfigError(problems)

    # ----------------------------------------------------------------------

    def _resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def data_root(self) -> Path:
        return self._resolve(self.data["paths"]["data_root"])

    @property
    def output_dir(self) -> Path:
        return self._resolve(self.data["paths"]["output_dir"])

    @property
    def manifest_path(self) -> Path:
        m = self.data["paths"].get("manifest")
        return self._resolve(m) if m else self.data_root / "manifest.json"

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def rotation(self) -> int:
        return self.data["rotation"]

    @property
    def threads(self) -> int:
        return self.data["threads"]

    def _feature_config(self, key):
        raw = self.data["features"].get(key, {})
        cfg = StftConfig(**raw) if key == "stft" else LocFrameConfig(**raw)
        if key == "stft":
            cfg.frame_length  # noqa: B018 - raises on non-integral frame sizes
        return cfg

    @property
    def stft(self) -> StftConfig:
        return self._feature_config("stft")

    @property
    def loc(self) -> LocFrameConfig:
        return self._feature_config("loc")

    def architecture(self, stage: str) -> list[dict]:
        m = self.data["models"][stage]
        return crnn_architecture(m["conv_filters"], m["lstm_units"], len(STAGE_LABELS[stage]))

    def train_config(self, stage: str) -> TrainConfig:
        raw = dict(self.data["training"].get(stage, {}))
        raw.setdefault("seed", self.seed)
        raw.setdefault("rotation", self.rotation)
        if raw.get("clip_norm") is None:
            raw["clip_norm"] = math.inf
        return TrainConfig(stage=stage, **raw)

    def canonical(self) -> dict:
        """Config content that determines results (thread count excluded)."""
        d = json.loads(json.dumps(self.data, sort_keys=True))
        d.pop("threads", None)
        return d

    @property
    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
