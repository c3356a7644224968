"""On-disk corpus layout and block-level feature extraction.

A corpus directory holds::

    manifest.json      fold manifest
    annotations.csv    per-second labels of every recording
    wav/<id>.wav       8-channel recordings
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioBlock, MultichannelRecording, downmix_and_normalize, read_annotations, read_wav, \
    segment_blocks
from .spatial import LocFrameConfig, assemble_spatial, loc_filterbank
from .spectral import StftConfig, filterbank_for, load_features, log_mel_block, save_features
from .training import BlockDataset, FoldManifest


@dataclass
class Corpus:
    root: Path
    manifest: FoldManifest
    annotations: dict

    def wav_path(self, recording_id: str) -> Path:
        return self.root / "wav" / f"{recording_id}.wav"

    def blocks(self, recording_id: str) -> list[AudioBlock]:
        return segment_blocks(read_wav(self.wav_path(recording_id)), self.annotations[recording_id],
                              recording_id)


def load_corpus(root) -> Corpus:
    root = Path(root)
    manifest = FoldManifest.load(root / "manifest.json")
    annotations = read_annotations(root / "annotations.csv")
    missing = [r for r in manifest.recordings if r not in annotations]
    if missing:
        raise ValueError(f"{root}: recordings without annotations: {missing}")
    return Corpus(root, manifest, annotations)


class FeatureExtractor:
    """Computes (stage-1 log-mel, stage-2 spatial) raw features for a block."""

    def __init__(self, stft: StftConfig = StftConfig(), loc: LocFrameConfig = LocFrameConfig()):
        self.stft = stft
        self.loc = loc
        self._fb1 = filterbank_for(stft)
        self._fb2 = loc_filterbank(loc)

    def stage1(self, block) -> np.ndarray:
        samples = np.asarray(getattr(block, "samples", block))
        mono, _silent = downmix_and_normalize(MultichannelRecording(self.stft.sample_rate, samples))
        return log_mel_block(mono, self.stft, self._fb1)

    def stage2(self, block) -> np.ndarray:
        return assemble_spatial(block, self.loc, fb=self._fb2)

    def __call__(self, block) -> tuple[np.ndarray, np.ndarray]:
        return self.stage1(block), self.stage2(block)

    def digest(self) -> str:
        return f"{self.stft.digest()}-{self.loc.digest()}"


def blocks_to_dataset(blocks: list[AudioBlock], extractor: FeatureExtractor) -> BlockDataset:
    feats = [extractor(b) for b in blocks]
    return BlockDataset(
        stage1=np.stack([f[0] for f in feats]).astype(np.float32),
        stage2=np.stack([f[1] for f in feats]).astype(np.float32),
        labels=np.array([b.labels.as_tuple() for b in blocks], dtype=np.int8).reshape(-1, 3),
        recording_ids=np.array([b.recording_id for b in blocks]),
        block_index=np.array([b.block_index for b in blocks], dtype=np.int64),
    )


def extract_dataset(corpus: Corpus, extractor: FeatureExtractor | None = None, threads: int = 1) -> BlockDataset:
    """Features for every block of every manifest recording, in manifest order."""
    extractor = extractor or FeatureExtractor()
    ids = corpus.manifest.recordings

    def one(rec_id):
        return blocks_to_dataset(corpus.blocks(rec_id), extractor)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(one, ids))
    else:
        parts = [one(r) for r in ids]
    return concat_datasets(parts)


def concat_datasets(parts: list[BlockDataset]) -> BlockDataset:
    return BlockDataset(
        np.concatenate([p.stage1 for p in parts]), np.concatenate([p.stage2 for p in parts]),
        np.concatenate([p.labels for p in parts]), np.concatenate([p.recording_ids for p in parts]),
        np.concatenate([p.block_index for p in parts]),
    )


def save_dataset(directory, ds: BlockDataset, digest: str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_features(directory / "stage1.f32", ds.stage1, {"stage": 1, "config_hash": digest})
    save_features(directory / "stage2.f32", ds.stage2, {"stage": 2, "config_hash": digest})
    save_features(directory / "labels.f32", ds.labels.astype(np.float32), {"config_hash": digest})
    index = [f"{r},{i}" for r, i in zip(ds.recording_ids.tolist(), ds.block_index.tolist())]
    (directory / "blocks.txt").write_text("\n".join(index) + "\n")


def load_dataset(directory, digest: str) -> BlockDataset:
    directory = Path(directory)
    s1, _ = load_features(directory / "stage1.f32", {"stage": 1, "config_hash": digest})
    s2, _ = load_features(directory / "stage2.f32", {"stage": 2, "config_hash": digest})
    lab, _ = load_features(directory / "labels.f32", {"config_hash": digest})
    rows = [line.rsplit(",", 1) for line in (directory / "blocks.txt").read_text().splitlines() if line]
    return BlockDataset(s1, s2, lab.astype(np.int8), np.array([r for r, _ in rows]),
                        np.array([int(i) for _, i in rows], dtype=np.int64))


CORPUS_VERSION = 1


def random_corpus_specs(n_scenes: int, seed: int, duration_s: int = 20) -> dict:
    """Scene specs named ``scene000``...; indoor and outdoor kinds alternate."""
    from .scene_synth import random_scene_spec

    rng = np.random.default_rng(seed)
    specs = {}
    for i in range(n_scenes):
        kind = "indoor" if i % 2 == 0 else "outdoor"
        specs[f"scene{i:03d}"] = random_scene_spec(rng, duration_s, kind, seed=int(rng.integers(2 ** 31)))
    return specs


def write_corpus(out_dir, specs: dict, geometry=None, threads: int = 1) -> Corpus:
    """Render every scene spec and write WAVs, annotations and a fold manifest."""
    import json

    from .audio_io import write_annotations, write_wav
    from .scene_synth import render_scene
    from .training import assign_folds, compute_fold_stats

    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    (out / "specs").mkdir(exist_ok=True)

    def one(item):
        rec_id, spec = item
        rec, labels = render_scene(spec, geometry)
        write_wav(out / "wav" / f"{rec_id}.wav", rec, "float32")
        (out / "specs" / f"{rec_id}.json").write_text(spec.to_json())
        return rec_id, labels

    items = sorted(specs.items())
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            annotations = dict(pool.map(one, items))
    else:
        annotations = dict(one(it) for it in items)
    write_annotations(out / "annotations.csv", annotations)
    manifest = assign_folds({rec_id: spec.scene_kind for rec_id, spec in specs.items()})
    (out / "manifest.json").write_text(manifest.to_json())
    stats = compute_fold_stats(annotations, manifest)
    (out / "fold_stats.json").write_text(json.dumps([vars(s) for s in stats], indent=2))
    return Corpus(out, manifest, annotations)
