#!/usr/bin/env python3
"""Feature-group ablation on the synthetic benchmark.

Trains full / no_trf / no_el for each task and seed under identical splits and
writes the table to runs/ablation/. Expects the benchmark CSVs from
scripts/make_dataset.py (or generates them on the fly with --fresh).
"""

import argparse
from pathlib import Path

from leadtime.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="runs/benchmark", help="directory with events.csv/static.csv")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--fresh", action="store_true", help="regenerate the benchmark first")
    args = ap.parse_args()

    if args.fresh or not (Path(args.data) / "events.csv").exists():
        rc = cli_main(["synth", "--out", args.data, "--n", "5000", "--seed", "7"])
        if rc != 0:
            return rc
    return cli_main(["ablate",
                     "--log", f"{args.data}/events.csv",
                     "--static", f"{args.data}/static.csv",
                     "--out", args.out,
                     "--seeds", str(args.seeds),
                     "--config", str(Path(__file__).resolve().parent.parent
                                     / "experiments" / "ablate.json")])


if __name__ == "__main__":
    raise SystemExit(main())
