"""``seld-kit`` command line: synth, features, train, evaluate, predict, gradcheck, report."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .audio_io import AlignmentError, LabelSet, WavError, read_wav, segment_blocks
from .config import ARTIFACT_VERSION, ConfigError, ExperimentConfig
from .dataset import (FeatureExtractor, blocks_to_dataset, extract_dataset, load_corpus, load_dataset,
                      random_corpus_specs, save_dataset, write_corpus)
from .neural.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .neural.layers import ShapeError
from .neural.model import ModelGraph
from .pipeline import (FlatSystem, HierarchicalSystem, TrainedStage, evaluate_joint, format_report_table,
                       write_predictions)
from .scene_synth import SceneSpec
from .spectral import Standardizer
from .training import STAGE_LABELS, compute_fold_stats, stage_pool, train_stage, write_log

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_MODEL = 4
EXIT_CHECK_FAILED = 5

THREADS_ENV = "SELD_KIT_THREADS"


def _echo(msg: str) -> None:
    print(msg, flush=True)


def _threads(args, cfg: ExperimentConfig | None = None) -> int:
    if getattr(args, "threads", None):
        return args.threads
    if os.environ.get(THREADS_ENV):
        return int(os.environ[THREADS_ENV])
    return cfg.threads if cfg else 1


def _load_config(args) -> ExperimentConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "rotation", None) is not None:
        overrides["rotation"] = args.rotation
    if getattr(args, "max_epochs", None) is not None:
        overrides["training"] = {s: {"max_epochs": args.max_epochs} for s in STAGE_LABELS}
    return ExperimentConfig.load(args.config, overrides)


def _artifact_meta(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.hash, "format_version": ARTIFACT_VERSION}


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _dataset(cfg: ExperimentConfig, threads: int):
    """Block features for the configured corpus, cached under ``output_dir/features``."""
    cfg.require_corpus()
    corpus = load_corpus(cfg.data_root)
    extractor = FeatureExtractor(cfg.stft, cfg.loc)
    cache = cfg.output_dir / "features"
    if (cache / "stage1.f32").exists():
        try:
            return corpus, load_dataset(cache, extractor.digest())
        except ValueError:
            pass
    ds = extract_dataset(corpus, extractor, threads)
    save_dataset(cache, ds, extractor.digest())
    return corpus, ds


def _checkpoint_path(cfg: ExperimentConfig, stage: str) -> Path:
    return cfg.output_dir / "checkpoints" / f"stage{stage}_rot{cfg.rotation}.ckpt"


def _load_stage(cfg: ExperimentConfig, stage: str, path: Path | None = None) -> TrainedStage:
    path = path or _checkpoint_path(cfg, stage)
    if not path.exists():
        raise CheckpointError(f"{path}: checkpoint not found (run `train --stage {stage}` first)")
    model, header, _ = load_checkpoint(path)
    meta = header["meta"]
    if meta.get("format_version") != ARTIFACT_VERSION:
        raise CheckpointError(f"{path}: artifact version {meta.get('format_version')} != {ARTIFACT_VERSION}")
    if meta.get("stage") != stage:
        raise CheckpointError(f"{path}: holds a stage {meta.get('stage')} model, expected stage {stage}")
    digest = FeatureExtractor(cfg.stft, cfg.loc).digest()
    if meta.get("feature_hash") != digest:
        raise CheckpointError(f"{path}: trained with feature config {meta.get('feature_hash')}, "
                              f"current config gives {digest}")
    return TrainedStage(model, Standardizer.from_dict(meta["standardizer"]))


# --------------------------------------------------------------------------
# Subcommands


def cmd_synth(args) -> int:
    cfg = ExperimentConfig.load(args.config) if args.config else None
    out = Path(args.out) if args.out else (cfg.data_root if cfg else None)
    if out is None:
        raise ConfigError(["synth: give --out or --config"])
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    synth = cfg.data["synth"] if cfg else {}
    if args.spec_dir:
        specs = {}
        problems = []
        for path in sorted(Path(args.spec_dir).glob("*.json")):
            try:
                spec = SceneSpec.load(path)
            except (TypeError, ValueError, KeyError) as err:
                problems.append(f"{path}: {err}")
                continue
            problems += [f"{path}: {p}" for p in spec.validate()]
            specs[path.stem] = spec
        if problems:
            raise ConfigError(problems)
        if not specs:
            raise ConfigError([f"{args.spec_dir}: no *.json scene specs found"])
    else:
        n = args.scenes or synth.get("n_scenes", 36)
        duration = args.duration or synth.get("duration_s", 20)
        specs = random_corpus_specs(n, seed, duration)
    corpus = write_corpus(out, specs, threads=_threads(args, cfg))
    _write_json(out / "corpus.json", {"format_version": ARTIFACT_VERSION, "seed": seed,
                                      "recordings": sorted(specs)})
    n_blocks = sum(len(v) for v in corpus.annotations.values())
    _echo(f"wrote {len(specs)} recordings ({n_blocks} one-second blocks) to {out}")
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = _load_config(args)
    _, ds = _dataset(cfg, _threads(args, cfg))
    _echo(f"features for {len(ds)} blocks: stage1 {ds.stage1.shape[1:]}, stage2 {ds.stage2.shape[1:]}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    stage = args.stage
    corpus, ds = _dataset(cfg, _threads(args, cfg))
    tcfg = cfg.train_config(stage)
    x = ds.features(stage)
    model = ModelGraph.from_architecture(cfg.architecture(stage), x.shape[1:], seed=tcfg.seed)
    _echo(f"stage {stage}: {model.count_parameters()} parameters, rotation {tcfg.rotation}")
    result = train_stage(model, ds, corpus.manifest, tcfg, progress=None if args.quiet else _echo)
    meta = {
        **_artifact_meta(cfg),
        "stage": stage,
        "rotation": tcfg.rotation,
        "labels": list(STAGE_LABELS[stage]),
        "standardizer": result.standardizer.to_dict(),
        "feature_hash": FeatureExtractor(cfg.stft, cfg.loc).digest(),
        "best_epoch": result.best_epoch,
        "stopped_epoch": result.stopped_epoch,
        "splits": result.splits,
    }
    ckpt = _checkpoint_path(cfg, stage)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, result.model, meta, result.optim)
    log_path = cfg.output_dir / "logs" / f"stage{stage}_rot{tcfg.rotation}.jsonl"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    write_log(log_path, result.log, {"config_hash": cfg.hash, "stage": stage})
    _echo(f"best epoch {result.best_epoch} of {result.stopped_epoch}; checkpoint {ckpt}")
    return EXIT_OK


def evaluate_systems(cfg: ExperimentConfig, ds, manifest, hierarchical=True, flat=True) -> dict:
    test = ds.of_recordings(manifest.split_ids(cfg.rotation)["test"])
    truth = [LabelSet.from_iterable(r) for r in test.labels.tolist()]
    report = {**_artifact_meta(cfg), "rotation": cfg.rotation, "n_test_blocks": len(test), "systems": {}}
    reports = {}
    if hierarchical:
        system = HierarchicalSystem(_load_stage(cfg, "1"), _load_stage(cfg, "2"))
        preds = system.predict_features(test.stage1, test.stage2)
        rep = evaluate_joint(preds, truth)
        gate_ok = sum(not (p.labels.speech and p.p_speech < 0.5) for p in preds)
        speech_pred = np.array([p.p_speech >= 0.5 for p in preds])
        speech_true = test.speech_mask
        speech_recall = float((speech_pred & speech_true).sum() / max(1, speech_true.sum()))
        report["systems"]["hierarchical"] = {**rep.to_dict(), "gate_invariant_blocks": gate_ok,
                                             "stage1_speech_recall": speech_recall}
        reports["hierarchical"] = rep
    if flat:
        system = FlatSystem(_load_stage(cfg, "flat"))
        rep = evaluate_joint(system.predict_features(test.stage1, test.stage2), truth)
        report["systems"]["flat"] = rep.to_dict()
        reports["flat"] = rep
    report["table"] = format_report_table(reports)
    return report


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    corpus, ds = _dataset(cfg, _threads(args, cfg))
    both = not (args.hierarchical or args.flat)
    report = evaluate_systems(cfg, ds, corpus.manifest, args.hierarchical or both, args.flat or both)
    out = cfg.output_dir / "reports" / f"evaluate_rot{cfg.rotation}.json"
    _write_json(out, report)
    out.with_suffix(".txt").write_text(report["table"] + "\n")
    _echo(report["table"])
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    rec = read_wav(args.wav)
    n_seconds = rec.num_samples // rec.sample_rate
    rec_id = Path(args.wav).stem
    blocks = segment_blocks(rec, [LabelSet()] * n_seconds, rec_id)
    if not blocks:
        raise AlignmentError(f"{args.wav}: shorter than one second")
    ds = blocks_to_dataset(blocks, FeatureExtractor(cfg.stft, cfg.loc))
    if args.flat:
        system = FlatSystem(_load_stage(cfg, "flat"))
    else:
        system = HierarchicalSystem(_load_stage(cfg, "1"), _load_stage(cfg, "2"))
    preds = system.predict_features(ds.stage1, ds.stage2)
    for p, b in zip(preds, blocks):
        p.recording_id, p.second = rec_id, b.block_index
    out = Path(args.out) if args.out else cfg.output_dir / "predictions" / f"{rec_id}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(out, preds)
    _write_json(out.with_suffix(".meta.json"), {**_artifact_meta(cfg), "system": "flat" if args.flat else
                                                "hierarchical", "rows": len(preds)})
    _echo(f"wrote {len(preds)} prediction rows to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .neural.gradcheck import run_gradcheck

    results = run_gradcheck(seed=args.seed or 0, h=args.h)
    ok = True
    for name, per_param in results.items():
        worst = max(r.max_rel_error for r in per_param)
        passed = worst < args.tol
        ok &= passed
        _echo(f"{'PASS' if passed else 'FAIL'} {name:<10} max relative error {worst:.3e}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_report(args) -> int:
    cfg = _load_config(args)
    cfg.require_corpus()
    corpus = load_corpus(cfg.data_root)
    stats = compute_fold_stats(corpus.annotations, corpus.manifest)
    rows = [vars(s) for s in stats]
    cols = list(rows[0])
    lines = [f"{'fold':<5}" + "".join(f"{c:>22}" for c in cols)]
    lines += [f"{k + 1:<5}" + "".join(f"{r[c]:>22}" for c in cols) for k, r in enumerate(rows)]
    models = {}
    for stage in STAGE_LABELS:
        shape = (99, 40) if stage == "1" else (22, 41) if stage == "2" else (99, 81)
        m = ModelGraph.from_architecture(cfg.architecture(stage), shape)
        models[stage] = {"n_params": m.count_parameters(), "summary": m.summary()}
        lines += ["", f"stage {stage} model", m.summary()]
    text = "\n".join(lines)
    out = cfg.output_dir / "reports" / "report.json"
    _write_json(out, {**_artifact_meta(cfg), "fold_stats": rows, "models": models})
    out.with_suffix(".txt").write_text(text + "\n")
    _echo(text)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seld-kit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help=f"worker cap (fallback: ${THREADS_ENV})")

    p = sub.add_parser("synth", help="render a synthetic labeled corpus")
    common(p, config_required=False)
    p.add_argument("--spec-dir", help="directory of scene spec JSON files")
    p.add_argument("--out", help="output corpus directory (default: config data_root)")
    p.add_argument("--scenes", type=int, help="number of random scenes when no --spec-dir")
    p.add_argument("--duration", type=int, help="random scene duration in seconds")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="extract and cache block features")
    common(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train one stage on one fold rotation")
    common(p)
    p.add_argument("--stage", required=True, choices=sorted(STAGE_LABELS))
    p.add_argument("--rotation", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score systems on the rotation's test fold")
    common(p)
    p.add_argument("--rotation", type=int)
    p.add_argument("--hierarchical", action="store_true")
    p.add_argument("--flat", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="per-second predictions for a WAV file")
    common(p)
    p.add_argument("--wav", required=True)
    p.add_argument("--rotation", type=int)
    p.add_argument("--flat", action="store_true", help="use the flat baseline instead")
    p.add_argument("--out", help="output CSV path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer type")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="fold statistics and model summaries")
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, ShapeError) as err:
        print(f"model error: {err}", file=sys.stderr)
        return EXIT_MODEL
    except (WavError, AlignmentError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
