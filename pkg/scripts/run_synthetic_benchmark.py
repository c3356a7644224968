"""Synthesize a corpus, train all three models and compare the two systems on one rotation.

    python3 scripts/run_synthetic_benchmark.py --workdir runs/bench
"""

import argparse
import json
import shutil
import sys
import time
from pathlib import Path

from seld_kit.cli import main as cli

ROOT = Path(__file__).resolve().parents[1]


def run(workdir: Path, config: Path, rotation: int | None) -> dict:
    workdir.mkdir(parents=True, exist_ok=True)
    shutil.copy(config, workdir / "config.json")
    base = ["--config", str(workdir / "config.json")]
    rot = [] if rotation is None else ["--rotation", str(rotation)]
    steps = [["synth"], ["report"]] + [["train", "--stage", s] + rot for s in ("1", "2", "flat")] + [["evaluate"] + rot]
    timings = {}
    for step in steps:
        if step[0] == "synth" and (workdir / "corpus" / "manifest.json").exists():
            continue
        start = time.perf_counter()
        code = cli(step + base)
        if code:
            sys.exit(code)
        timings[" ".join(step)] = round(time.perf_counter() - start, 1)
    reports = workdir / "out" / "reports"
    name = f"evaluate_rot{rotation if rotation is not None else json.loads(config.read_text()).get('rotation', 0)}"
    report = json.loads((reports / f"{name}.json").read_text())
    return {"timings_s": timings, "macro_f1": {k: v["macro_f1"] for k, v in report["systems"].items()}}


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--workdir", type=Path, default=Path("runs/bench"))
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "synthetic_benchmark.json")
    ap.add_argument("--rotation", type=int)
    args = ap.parse_args()
    print(json.dumps(run(args.workdir, args.config, args.rotation), indent=2))
