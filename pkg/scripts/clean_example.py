#!/usr/bin/env python3
"""Small end-to-end example: simulate three aDBS recordings, build a library,
clean one semi-real recording with each method and compare NMSE."""

import warnings

from stimclean.evaluation import nmse
from stimclean.suite import SuiteConfig, generate, run_methods


def main():
    cfg = SuiteConfig(n_recordings=3, duration_s=20.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = generate(cfg)
    semi, truth, res = data.semireal[0], data.truths[0], data.adbs[0]
    outputs, pre = run_methods(semi, data.library, cfg, res.recording.id)
    print(f"{semi.id}: {pre.peaks.size} artifact peaks in {len(pre.periods)} stimulation periods")
    for method, (y, ms, _) in outputs.items():
        print(f"  {method:16s} NMSE {nmse(y, truth.base_lfp):7.2f} dB   {ms:7.3f} ms/segment")


if __name__ == "__main__":
    main()
