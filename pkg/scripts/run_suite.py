#!/usr/bin/env python3
"""Run the synthetic evaluation suite and print the method x metric table.

    python scripts/run_suite.py --out suite.json              # 10 x 120 s
    python scripts/run_suite.py --recordings 3 --duration 20  # smoke run
"""

import argparse
import json
import logging
import warnings
from pathlib import Path

from stimclean.suite import SuiteConfig, run_suite

COLUMNS = ("nmse_wide", "nmse_alpha", "nmse_beta", "nmse_hfo", "ar", "sc", "f1", "f1_onset",
           "deviation_ms", "ms_per_segment")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--recordings", type=int, default=10)
    ap.add_argument("--duration", type=float, default=120.0, help="seconds per recording")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, help="write the full JSON report here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = SuiteConfig(n_recordings=args.recordings, duration_s=args.duration, seed=args.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = run_suite(cfg)
    if args.out:
        args.out.write_text(json.dumps(report, indent=2, default=float))

    print(f"{'method':16s}" + "".join(f"{c:>15s}" for c in COLUMNS))
    for method, row in report["summary"].items():
        cells = [row[c]["mean"] if c in row else float("nan") for c in COLUMNS]
        print(f"{method:16s}" + "".join(f"{v:15.3f}" for v in cells))
    print(f"hash {report['hash'][:16]}  total {report['timing']['total_s']:.0f} s")


if __name__ == "__main__":
    main()
