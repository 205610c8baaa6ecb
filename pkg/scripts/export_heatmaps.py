#!/usr/bin/env python3
"""Export attention heatmaps for directive sentences from a trained run.

Thin wrapper over `salab heatmap` that also prints a quick textual view of
each exported grid.

Usage:
    python3 scripts/export_heatmaps.py --model-dir runs/att-sparsemax \
        --data runs/data --out heatmaps/ --limit 3
"""

import argparse
import sys
from pathlib import Path

from salab.cli import main as salab
from salab.evaluation import read_heatmap


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model-dir", required=True)
    ap.add_argument("--data", required=True)
    ap.add_argument("--out", default="heatmaps")
    ap.add_argument("--filter", default="dnr,dni,cmo")
    ap.add_argument("--limit", type=int, default=3)
    args = ap.parse_args(argv)

    rc = salab(["heatmap", "--model-dir", args.model_dir, "--data", args.data,
                "--out", args.out, "--filter", args.filter,
                "--limit", str(args.limit)])
    if rc != 0:
        return rc

    for path in sorted(Path(args.out).glob("*.csv")):
        weights, rows, cols = read_heatmap(path)
        print(f"\n{path.name}")
        print("        " + " ".join(f"{c:>8}" for c in cols))
        for token, w in zip(rows, weights):
            cells = " ".join(f"{v:8.3f}" if v else f"{'.':>8}" for v in w)
            print(f"{token:>8} {cells}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
