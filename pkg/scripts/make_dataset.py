#!/usr/bin/env python3
"""Generate the default synthetic benchmark and print its signal audit."""

import argparse
from pathlib import Path

from leadtime.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/benchmark", help="output directory")
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    Path(args.out).mkdir(parents=True, exist_ok=True)
    return cli_main(["synth", "--out", args.out, "--n", str(args.n),
                     "--seed", str(args.seed), "--audit"])


if __name__ == "__main__":
    raise SystemExit(main())
