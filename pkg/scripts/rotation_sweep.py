"""Train and evaluate every fold rotation on one corpus; prints mean and spread of macro F1 per system.

    python3 scripts/rotation_sweep.py --workdir runs/sweep
"""

import argparse
import json
from pathlib import Path

import numpy as np

from run_synthetic_benchmark import ROOT, run

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--workdir", type=Path, default=Path("runs/sweep"))
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "synthetic_benchmark.json")
    ap.add_argument("--rotations", type=int, nargs="+", default=list(range(6)))
    args = ap.parse_args()
    scores = {}
    for r in args.rotations:
        result = run(args.workdir, args.config, r)
        for system, f1 in result["macro_f1"].items():
            scores.setdefault(system, []).append(f1)
        print(f"rotation {r}: " + ", ".join(f"{k} {v:.4f}" for k, v in result["macro_f1"].items()), flush=True)
    summary = {k: {"mean": float(np.mean(v)), "std": float(np.std(v)), "per_rotation": v} for k, v in scores.items()}
    print(json.dumps(summary, indent=2))
    (args.workdir / "sweep_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
