#!/usr/bin/env python3
"""Run the three standard ablation axes through the CLI and save CSVs.

Sweeps prompt length, block count, and training shots on the desk config,
writing one CSV per axis into the output directory.
"""

import argparse
import os
import sys

from mope_baf.cli import main as cli_main

AXES = {
    "prompt_length": "2,4,10,16",
    "block_count": "1,2,3",
    "shots": "4,8,16,32",
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=os.path.join(
        os.path.dirname(__file__), "..", "configs", "desk.ini"))
    ap.add_argument("--out-dir", default="runs/ablations")
    ap.add_argument("--runs", type=int, default=3)
    ap.add_argument("--axes", default=",".join(AXES))
    args = ap.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    for axis in args.axes.split(","):
        values = AXES[axis]
        out = os.path.join(args.out_dir, f"{axis}.csv")
        print(f"== {axis}: values {values} -> {out}", flush=True)
        code = cli_main(["ablate", "--config", args.config, "--axis", axis,
                         "--values", values, "--runs", str(args.runs),
                         "--out", out])
        if code != 0:
            sys.exit(code)


if __name__ == "__main__":
    main()
