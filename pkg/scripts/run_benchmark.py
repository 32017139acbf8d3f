#!/usr/bin/env python3
"""Sequential-architecture sweep (RNN/LSTM/GRU/Bi-LSTM/Bi-GRU) on the benchmark."""

import argparse
from pathlib import Path

from leadtime.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="runs/benchmark")
    ap.add_argument("--out", default="runs/bench")
    ap.add_argument("--fresh", action="store_true")
    args = ap.parse_args()

    if args.fresh or not (Path(args.data) / "events.csv").exists():
        rc = cli_main(["synth", "--out", args.data, "--n", "5000", "--seed", "7"])
        if rc != 0:
            return rc
    return cli_main(["bench",
                     "--log", f"{args.data}/events.csv",
                     "--static", f"{args.data}/static.csv",
                     "--out", args.out,
                     "--config", str(Path(__file__).resolve().parent.parent
                                     / "experiments" / "bench.json")])


if __name__ == "__main__":
    raise SystemExit(main())
