"""Build five synthetic corpora shaped like the transfer-matrix datasets and run the matrix.

Three corpora are stored as scanned-style PNGs (image path), two as time series;
the output directory receives results.json and the markdown tables.

    python3 scripts/synthetic_matrix.py --out runs/matrix
"""

import argparse
import sys
from pathlib import Path

from inkdx.cli import dispatch
from inkdx.synth import write_synthetic_matrix


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/matrix")
    ap.add_argument("--n", type=int, default=6, help="subjects per class and corpus")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--weights", default="none")
    ap.add_argument("--dry-run", action="store_true")
    args = ap.parse_args()

    out = Path(args.out)
    cfg = write_synthetic_matrix(out / "data", args.n, args.seed, settings={
        "model": {"pretrained_weights": args.weights, "standardize_features": True},
        "train": {"freeze_backbone": True, "lr": 1e-4},
    })
    argv = ["run", "--suite", "matrix", "--config", str(cfg), "--out", str(out)]
    code = dispatch(argv + (["--dry-run"] if args.dry_run else []))
    if code == 0 and not args.dry_run:
        print((out / "table_transfer.md").read_text())
    sys.exit(code)


if __name__ == "__main__":
    main()
