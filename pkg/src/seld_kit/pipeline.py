"""Hierarchical (detect, then localize speech) and flat classifiers, and their joint scoring."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .audio_io import LabelSet
from .dataset import FeatureExtractor
from .neural.layers import ShapeError
from .neural.model import THRESHOLD, ModelGraph
from .spectral import Standardizer
from .training import F1Report, f1_score, flat_features

JOINT_LABELS = ("speech_front", "speech_back", "something_else")
PREDICTION_HEADER = ("recording_id", "second", "speech_front", "speech_back", "something_else",
                     "p_front", "p_back", "p_else", "p_speech")


@dataclass
class TrainedStage:
    model: ModelGraph
    standardizer: Standardizer

    def probabilities(self, raw: np.ndarray) -> np.ndarray:
        x = self.standardizer.apply(raw)
        if tuple(x.shape[1:]) != self.model.input_shape:
            raise ShapeError(f"features {tuple(x.shape[1:])} do not match model input {self.model.input_shape}")
        return self.model.predict_proba(x.astype(np.float32))


@dataclass
class BlockPrediction:
    labels: LabelSet
    p_speech: Optional[float] = None
    p_something_else: Optional[float] = None
    p_front: Optional[float] = None  # None when stage 2 did not run
    p_back: Optional[float] = None
    recording_id: str = ""
    second: int = 0

    def csv_row(self) -> tuple:
        def fmt(p):
            return "" if p is None else f"{p:.6f}"
        return (self.recording_id, self.second) + self.labels.as_tuple() + (
            fmt(self.p_front), fmt(self.p_back), fmt(self.p_something_else), fmt(self.p_speech))


class HierarchicalSystem:
    """Stage 1 decides speech / something else; stage 2 assigns front/back to gated speech blocks."""

    def __init__(self, stage1: TrainedStage, stage2: TrainedStage, threshold: float = THRESHOLD):
        self.stage1 = stage1
        self.stage2 = stage2
        self.threshold = threshold

    def predict_features(self, stage1_raw: np.ndarray, stage2_raw: np.ndarray) -> list[BlockPrediction]:
        p1 = self.stage1.probabilities(stage1_raw)
        gate = p1[:, 0] >= self.threshold
        p2 = np.full((len(p1), 2), np.nan)
        if gate.any():
            p2[gate] = self.stage2.probabilities(stage2_raw[gate])
        out = []
        for i in range(len(p1)):
            front = back = None
            if gate[i]:
                front, back = float(p2[i, 0]), float(p2[i, 1])
            labels = LabelSet(
                speech_front=bool(gate[i] and front >= self.threshold),
                speech_back=bool(gate[i] and back >= self.threshold),
                something_else=bool(p1[i, 1] >= self.threshold),
            )
            out.append(BlockPrediction(labels, float(p1[i, 0]), float(p1[i, 1]), front, back))
        return out


class FlatSystem:
    """One network emitting (front, back, else) from log-mel plus upsampled spatial features."""

    def __init__(self, flat: TrainedStage, threshold: float = THRESHOLD):
        self.flat = flat
        self.threshold = threshold

    def predict_features(self, stage1_raw: np.ndarray, stage2_raw: np.ndarray) -> list[BlockPrediction]:
        p = self.flat.probabilities(flat_features(stage1_raw, stage2_raw))
        return [
            BlockPrediction(LabelSet(*(bool(v >= self.threshold) for v in row)), None, float(row[2]),
                            float(row[0]), float(row[1]))
            for row in p
        ]


def _block_features(block, extractor: FeatureExtractor | None):
    extractor = extractor or FeatureExtractor()
    s1, s2 = extractor(block)
    return s1[None], s2[None]


def predict_hierarchical(block, stage1_model: ModelGraph, stage2_model: ModelGraph,
                         standardizers: Sequence[Standardizer], extractor: FeatureExtractor | None = None
                         ) -> BlockPrediction:
    """Predict one block; stage 2 runs only when stage-1 speech probability >= 0.5."""
    system = HierarchicalSystem(TrainedStage(stage1_model, standardizers[0]),
                                TrainedStage(stage2_model, standardizers[1]))
    pred = system.predict_features(*_block_features(block, extractor))[0]
    pred.recording_id = getattr(block, "recording_id", "")
    pred.second = getattr(block, "block_index", 0)
    return pred


def predict_flat(block, flat_model: ModelGraph, standardizer: Standardizer,
                 extractor: FeatureExtractor | None = None) -> BlockPrediction:
    pred = FlatSystem(TrainedStage(flat_model, standardizer)).predict_features(*_block_features(block, extractor))[0]
    pred.recording_id = getattr(block, "recording_id", "")
    pred.second = getattr(block, "block_index", 0)
    return pred


def _as_label_matrix(items) -> np.ndarray:
    rows = []
    for it in items:
        if isinstance(it, BlockPrediction):
            it = it.labels
        rows.append(it.as_tuple() if isinstance(it, LabelSet) else tuple(int(v) for v in it))
    return np.asarray(rows, dtype=bool).reshape(-1, 3)


def evaluate_joint(predictions, annotations, prediction_keys=None, annotation_keys=None) -> F1Report:
    """Per-label and macro P/R/F1 over (speech_front, speech_back, something_else).

    Optional key sequences (e.g. ``(recording_id, second)``) are checked for
    alignment before scoring.
    """
    if len(predictions) != len(annotations):
        raise ValueError(f"{len(predictions)} predictions for {len(annotations)} annotated blocks")
    if prediction_keys is not None and annotation_keys is not None:
        if list(prediction_keys) != list(annotation_keys):
            raise ValueError("prediction and annotation blocks are not aligned")
    return f1_score(_as_label_matrix(predictions), _as_label_matrix(annotations), JOINT_LABELS)


def write_predictions(path, predictions: Sequence[BlockPrediction]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for p in predictions:
            w.writerow(p.csv_row())


def format_report_table(reports: dict[str, F1Report]) -> str:
    """Side-by-side per-label F1 and macro P/R/F1 for each system."""
    head = f"{'system':<14}" + "".join(f"{lab:>16}" for lab in JOINT_LABELS) + f"{'macro P':>10}{'macro R':>10}{'macro F1':>10}"
    lines = [head, "-" * len(head)]
    for name, rep in reports.items():
        lines.append(f"{name:<14}" + "".join(f"{v:>16.4f}" for v in rep.f1)
                     + f"{rep.macro_precision:>10.4f}{rep.macro_recall:>10.4f}{rep.macro_f1:>10.4f}")
    return "\n".join(lines)
