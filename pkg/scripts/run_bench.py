#!/usr/bin/env python3
"""Per-segment latency of every method against a 5e4-segment pool.

    python scripts/run_bench.py            # full pool
    python scripts/run_bench.py --quick    # 3000-segment smoke run
"""

import argparse
import json

from stimclean.bench import BenchConfig, quick_config, run_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", help="JSON report path")
    args = ap.parse_args()
    cfg = quick_config(threads=args.threads) if args.quick else BenchConfig(threads=args.threads)
    rep = run_benchmark(cfg)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rep, fh, indent=2)
    print(f"pool {rep['config']['pool_actual']} segments, "
          f"{rep['config']['target_segments']} target segments")
    for m, s in rep["methods_ms_per_segment"].items():
        print(f"  {m:16s} {s['mean']:9.4f} ms/segment (sd {s['std']:.4f})")
    print(f"exact / ANN {rep['exact_over_ann']:.1f}x, real-time budget "
          f"{rep['realtime_budget_ms']:.2f} ms: {'met' if rep['within_budget'] else 'missed'}")
    print(f"total {rep['timing']['total_s']:.0f} s")


if __name__ == "__main__":
    main()
