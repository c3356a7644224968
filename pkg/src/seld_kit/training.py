"""Fold protocol, label statistics, oversampling, F1 metrics and the training loop."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio_io import LabelSet
from .neural.model import ModelGraph, bce_loss, binarize
from .optim import STEP_FUNCTIONS, OptimState
from .spectral import Standardizer, fit_standardizer

N_FOLDS = 6
MANIFEST_VERSION = 1

# label columns of BlockDataset.labels
FRONT, BACK, ELSE = 0, 1, 2

STAGE_LABELS = {
    "1": ("speech", "something_else"),
    "2": ("speech_front", "speech_back"),
    "flat": ("speech_front", "speech_back", "something_else"),
}


# --------------------------------------------------------------------------
# Folds


@dataclass
class FoldManifest:
    folds: list  # N_FOLDS lists of recording ids
    scene_kinds: dict = field(default_factory=dict)
    version: int = MANIFEST_VERSION

    def __post_init__(self):
        self.folds = [list(f) for f in self.folds]
        problems = self.validate()
        if problems:
            raise ValueError("invalid fold manifest: " + "; ".join(problems))

    def validate(self) -> list[str]:
        problems = []
        if len(self.folds) != N_FOLDS:
            problems.append(f"expected {N_FOLDS} folds, got {len(self.folds)}")
        seen = {}
        for k, fold in enumerate(self.folds):
            for rec in fold:
                if rec in seen:
                    problems.append(f"recording {rec!r} appears in folds {seen[rec]} and {k}")
                seen[rec] = k
        return problems

    @property
    def recordings(self) -> list[str]:
        return [r for f in self.folds for r in f]

    def fold_of(self, recording_id: str) -> int:
        for k, fold in enumerate(self.folds):
            if recording_id in fold:
                return k
        raise KeyError(recording_id)

    @staticmethod
    def rotation(r: int) -> tuple[list[int], list[int], int]:
        """(train folds, validation folds, test fold) for rotation ``r``: 3 / 2 / 1."""
        r %= N_FOLDS
        return [(r + 3) % 6, (r + 4) % 6, (r + 5) % 6], [(r + 1) % 6, (r + 2) % 6], r

    def split_ids(self, r: int) -> dict[str, list[str]]:
        train, val, test = self.rotation(r)
        return {
            "train": [rec for k in train for rec in self.folds[k]],
            "validation": [rec for k in val for rec in self.folds[k]],
            "test": list(self.folds[test]),
        }

    def to_json(self) -> str:
        return json.dumps({"version": self.version, "folds": self.folds, "scene_kinds": self.scene_kinds},
                          indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FoldManifest":
        d = json.loads(text)
        if d.get("version") != MANIFEST_VERSION:
            raise ValueError(f"fold manifest version {d.get('version')} != {MANIFEST_VERSION}")
        return cls(d["folds"], d.get("scene_kinds", {}), d["version"])

    @classmethod
    def load(cls, path) -> "FoldManifest":
        return cls.from_json(Path(path).read_text())


def assign_folds(scene_kinds: dict[str, str], n_folds: int = N_FOLDS) -> FoldManifest:
    """Deal recordings to folds round-robin within each scene kind, keeping fold sizes level."""
    folds = [[] for _ in range(n_folds)]
    k = 0
    for kind in sorted(set(scene_kinds.values())):
        for rec in sorted(r for r, v in scene_kinds.items() if v == kind):
            folds[k % n_folds].append(rec)
            k += 1
    return FoldManifest(folds, dict(scene_kinds))


# --------------------------------------------------------------------------
# Label statistics


@dataclass
class FoldStats:
    total: int = 0
    something_else: int = 0
    speech_front_or_back: int = 0
    no_labels: int = 0
    front_only: int = 0
    back_only: int = 0
    front_and_back: int = 0


def label_stats(labels: Sequence[LabelSet]) -> FoldStats:
    s = FoldStats()
    for lab in labels:
        s.total += 1
        s.something_else += lab.something_else
        s.speech_front_or_back += lab.speech
        s.no_labels += not (lab.speech or lab.something_else)
        s.front_only += lab.speech_front and not lab.speech_back
        s.back_only += lab.speech_back and not lab.speech_front
        s.front_and_back += lab.speech_front and lab.speech_back
    return s


def compute_fold_stats(annotations: dict[str, Sequence[LabelSet]], manifest: FoldManifest | None = None
                       ) -> list[FoldStats]:
    """Per-fold block counts for each label combination (one entry per fold)."""
    if manifest is None:
        return [label_stats([lab for labs in annotations.values() for lab in labs])]
    return [label_stats([lab for rec in fold for lab in annotations.get(rec, [])]) for fold in manifest.folds]


# --------------------------------------------------------------------------
# Oversampling


def oversample_indices(classes: Sequence, seed: int = 0) -> np.ndarray:
    """Indices that bring every class up to the largest class count.

    ``classes`` holds one hashable class key per item (e.g. a label tuple).
    Originals are all kept; extra copies are drawn with replacement within the
    class. The result is shuffled, deterministically for ``seed``.
    """
    groups = defaultdict(list)
    for i, c in enumerate(classes):
        groups[c].append(i)
    if not groups:
        return np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    target = max(len(g) for g in groups.values())
    out = []
    for key in groups:  # first-occurrence order; keys need not be orderable
        members = np.asarray(groups[key])
        out.append(members)
        if len(members) < target:
            out.append(rng.choice(members, target - len(members), replace=True))
    idx = np.concatenate(out)
    return idx[rng.permutation(len(idx))]


def oversample_balance(blocks: Sequence, seed: int = 0, key=None) -> list:
    """Return ``blocks`` resampled so each distinct label combination is equally frequent."""
    key = key or (lambda b: b.labels.as_tuple())
    return [blocks[i] for i in oversample_indices([key(b) for b in blocks], seed)]


# --------------------------------------------------------------------------
# Metrics


@dataclass
class F1Report:
    labels: tuple
    tp: list
    fp: list
    fn: list
    precision: list
    recall: list
    f1: list

    @property
    def macro_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def macro_recall(self) -> float:
        return float(np.mean(self.recall))

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["labels"] = list(self.labels)
        d.update(macro_precision=self.macro_precision, macro_recall=self.macro_recall, macro_f1=self.macro_f1)
        return d


def _safe_div(a, b):
    return a / b if b else 0.0


def f1_score(predictions, targets, labels: Sequence[str] | None = None) -> F1Report:
    """Per-label precision, recall and F1 (each 0 when its denominator is 0)."""
    p = np.asarray(predictions, dtype=bool)
    y = np.asarray(targets, dtype=bool)
    if p.shape != y.shape:
        raise ValueError(f"predictions {p.shape} and targets {y.shape} differ in shape")
    if p.ndim == 1:
        p, y = p[:, None], y[:, None]
    tp = (p & y).sum(axis=0).tolist()
    fp = (p & ~y).sum(axis=0).tolist()
    fn = (~p & y).sum(axis=0).tolist()
    prec = [_safe_div(a, a + b) for a, b in zip(tp, fp)]
    rec = [_safe_div(a, a + b) for a, b in zip(tp, fn)]
    f1 = [_safe_div(2 * a * b, a + b) for a, b in zip(prec, rec)]
    labels = tuple(labels) if labels is not None else tuple(f"label{i}" for i in range(p.shape[1]))
    return F1Report(labels, tp, fp, fn, prec, rec, f1)


# --------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    stage: str = "1"  # "1" | "2" | "flat"
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 500
    patience: int | None = None  # default: 25 (stage 1, flat) or 1 (stage 2)
    seed: int = 0
    oversample: bool | None = None  # default: on for stage 2
    rotation: int = 0
    clip_norm: float = math.inf

    def __post_init__(self):
        self.stage = str(self.stage)

    def validate(self) -> list[str]:
        problems = []
        if self.stage not in STAGE_LABELS:
            problems.append(f"stage must be one of {sorted(STAGE_LABELS)}, got {self.stage!r}")
        if self.optimizer not in STEP_FUNCTIONS:
            problems.append(f"optimizer must be one of {sorted(STEP_FUNCTIONS)}, got {self.optimizer!r}")
        if self.resolved_patience < 1:
            problems.append(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            problems.append(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not self.lr > 0:
            problems.append(f"lr must be > 0, got {self.lr}")
        return problems

    @property
    def resolved_patience(self) -> int:
        if self.patience is not None:
            return self.patience
        return 1 if self.stage == "2" else 25

    @property
    def resolved_oversample(self) -> bool:
        return self.stage == "2" if self.oversample is None else self.oversample

    @property
    def stop_rule(self) -> str:
        return "decrease" if self.stage == "2" else "no_improvement"


class EarlyStopping:
    """Tracks the best monitored score.

    ``no_improvement``: every epoch not beating the best counts against patience.
    ``decrease``: only epochs scoring below the best count; ties are neutral.
    """

    def __init__(self, patience: int, rule: str = "no_improvement"):
        self.patience = patience
        self.rule = rule
        self.best = -math.inf
        self.bad_epochs = 0

    def update(self, score: float) -> tuple[bool, bool]:
        """Returns ``(improved, stop)``."""
        if score > self.best:
            self.best = score
            self.bad_epochs = 0
            return True, False
        if self.rule == "no_improvement" or score < self.best:
            self.bad_epochs += 1
        return False, self.bad_epochs >= self.patience


@dataclass
class BlockDataset:
    """Per-block features and labels for a corpus.

    ``labels`` columns are (speech_front, speech_back, something_else).
    """

    stage1: np.ndarray  # (N, frames, 40) raw log-mel
    stage2: np.ndarray  # (N, frames, 41) raw spatial
    labels: np.ndarray  # (N, 3)
    recording_ids: np.ndarray
    block_index: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, mask_or_idx) -> "BlockDataset":
        return BlockDataset(self.stage1[mask_or_idx], self.stage2[mask_or_idx], self.labels[mask_or_idx],
                            self.recording_ids[mask_or_idx], self.block_index[mask_or_idx])

    def of_recordings(self, ids) -> "BlockDataset":
        return self.subset(np.isin(self.recording_ids, list(ids)))

    @property
    def speech_mask(self) -> np.ndarray:
        return (self.labels[:, FRONT] | self.labels[:, BACK]).astype(bool)

    def targets(self, stage: str) -> np.ndarray:
        lab = self.labels.astype(np.float32)
        if stage == "1":
            return np.stack([np.maximum(lab[:, FRONT], lab[:, BACK]), lab[:, ELSE]], axis=1)
        if stage == "2":
            return lab[:, [FRONT, BACK]]
        if stage == "flat":
            return lab.copy()
        raise ValueError(f"unknown stage {stage!r}")

    def features(self, stage: str) -> np.ndarray:
        if stage == "1":
            return self.stage1
        if stage == "2":
            return self.stage2
        if stage == "flat":
            return flat_features(self.stage1, self.stage2)
        raise ValueError(f"unknown stage {stage!r}")


def upsample_indices(n_target: int, n_source: int, target_hop: float = 480, target_frame: float = 960,
                     source_hop: float = 2040, source_frame: float = 4080) -> np.ndarray:
    """Nearest source frame (by frame centre time) for each target frame."""
    centres = np.arange(n_target) * target_hop + target_frame / 2
    idx = np.rint((centres - source_frame / 2) / source_hop).astype(int)
    return np.clip(idx, 0, n_source - 1)


def flat_features(stage1: np.ndarray, stage2: np.ndarray) -> np.ndarray:
    """Log-mel frames concatenated with nearest-neighbour upsampled spatial frames."""
    idx = upsample_indices(stage1.shape[-2], stage2.shape[-2])
    return np.concatenate([stage1, stage2[..., idx, :]], axis=-1)


@dataclass
class TrainResult:
    model: ModelGraph
    standardizer: Standardizer
    log: list
    best_epoch: int
    stopped_epoch: int
    optim: OptimState
    splits: dict


def stage_pool(dataset: BlockDataset, ids, stage: str) -> BlockDataset:
    pool = dataset.of_recordings(ids)
    return pool.subset(pool.speech_mask) if stage == "2" else pool


def _monitor(report: F1Report, stage: str) -> float:
    # stage 1: merged speech F1; stage 2: mean direction F1; flat: macro F1
    return report.f1[0] if stage == "1" else report.macro_f1


def evaluate_split(model: ModelGraph, x: np.ndarray, y: np.ndarray, labels, batch_size: int = 64):
    probs = model.predict_proba(x, batch_size)
    loss = bce_loss(probs, y)[0] if len(y) else float("nan")
    return loss, f1_score(binarize(probs), y, labels)


def train_stage(model: ModelGraph, dataset: BlockDataset, manifest: FoldManifest, cfg: TrainConfig,
                progress=None) -> TrainResult:
    """Train one stage on rotation ``cfg.rotation``, keeping the best validation checkpoint."""
    problems = cfg.validate()
    if problems:
        raise ValueError("invalid training config: " + "; ".join(problems))
    stage = cfg.stage
    labels = STAGE_LABELS[stage]
    splits = manifest.split_ids(cfg.rotation)
    train = stage_pool(dataset, splits["train"], stage)
    val = stage_pool(dataset, splits["validation"], stage)
    if len(train) == 0 or len(val) == 0:
        raise ValueError(f"empty split for stage {stage}: train={len(train)} validation={len(val)}")

    x_train_raw = train.features(stage)
    std = fit_standardizer(x_train_raw, provenance=sorted(set(train.recording_ids.tolist())))
    x_train = std.apply(x_train_raw).astype(np.float32)
    y_train = train.targets(stage)
    x_val = std.apply(val.features(stage)).astype(np.float32)
    y_val = val.targets(stage)

    if cfg.resolved_oversample:
        idx = oversample_indices([tuple(r) for r in y_train.tolist()], cfg.seed)
        x_train, y_train = x_train[idx], y_train[idx]
        vidx = oversample_indices([tuple(r) for r in y_val.tolist()], cfg.seed + 1)
        x_val, y_val = x_val[vidx], y_val[vidx]

    if model.n_outputs != len(labels):
        raise ValueError(f"model emits {model.n_outputs} labels, stage {stage} needs {len(labels)}")

    optim = OptimState(kind=cfg.optimizer, lr=cfg.lr, clip_norm=cfg.clip_norm)
    step = STEP_FUNCTIONS[cfg.optimizer]
    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopping(cfg.resolved_patience, cfg.stop_rule)
    best = (model.copy(), 0)
    log = []
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(len(x_train))
        total = 0.0
        for start in range(0, len(perm), cfg.batch_size):
            b = perm[start:start + cfg.batch_size]
            report = model.loss_and_gradients(x_train[b], y_train[b])
            step(model.parameters(), model.gradients(), optim)
            total += report.loss * len(b)
        train_loss = total / len(perm)
        val_loss, rep = evaluate_split(model, x_val, y_val, labels)
        score = _monitor(rep, stage)
        log.append({"epoch": epoch, "split": "train", "loss": train_loss})
        log.append({"epoch": epoch, "split": "validation", "loss": val_loss, "precision": rep.precision,
                    "recall": rep.recall, "f1": rep.f1, "macro_f1": rep.macro_f1, "monitor": score})
        improved, stop = stopper.update(score)
        if improved:
            best = (model.copy(), epoch)
        if progress:
            progress(f"stage {stage} epoch {epoch}: train loss {train_loss:.4f} val loss {val_loss:.4f} "
                     f"monitor {score:.4f}{' *' if improved else ''}")
        if stop:
            break
    return TrainResult(best[0], std, log, best[1], epoch, optim, splits)


def write_log(path, records: list, extra: dict | None = None) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({**(extra or {}), **rec}, sort_keys=True) + "\n")
