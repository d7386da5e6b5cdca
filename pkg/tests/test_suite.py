import warnings

import numpy as np
import pytest

from stimclean.core import ValidationError
from stimclean.suite import SuiteConfig, aggregate, report_hash, run_suite, score


def test_config_validation():
    with pytest.raises(ValidationError):
        SuiteConfig(n_recordings=0)
    with pytest.raises(ValidationError):
        SuiteConfig(methods=("raw", "magic"))


def test_unknown_metric():
    x = np.zeros(100)
    with pytest.raises(ValidationError):
        score({"raw": (x, None, None)}, x + 1, None, [], 22000.0, 22, 158, metrics=("bogus",))


def test_aggregate_skips_nan():
    rows = [{"m": {"a": 1.0}}, {"m": {"a": float("nan")}}, {"m": {"a": 3.0}}]
    assert aggregate(rows)["m"]["a"] == {"mean": 2.0, "std": 1.0}


def test_hash_ignores_timing():
    a = {"summary": {"raw": {"nmse_wide": 1.0, "ms_per_segment": 3.0}}, "timing": {"total_s": 1}}
    b = {"summary": {"raw": {"nmse_wide": 1.0, "ms_per_segment": 9.0}}, "timing": {"total_s": 5}}
    assert report_hash(a) == report_hash(b)
    b["summary"]["raw"]["nmse_wide"] = 1.5
    assert report_hash(a) != report_hash(b)


def test_tiny_run_is_reproducible():
    cfg = SuiteConfig(n_recordings=2, duration_s=15.0, methods=("raw", "ts", "pulse-blank"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, b = run_suite(cfg), run_suite(cfg)
    assert a["hash"] == b["hash"]
    assert set(a["summary"]) == {"raw", "ts", "pulse-blank"}


def test_small_suite_ordering(small_suite, small_runs):
    cfg, data = small_suite
    rows = [score(out, truth.base_lfp, truth.schedule, pre.peaks, semi.fs,
                  semi.pre_samples, semi.post_samples, cfg.beta, metrics=("nmse",))
            for (out, pre), semi, truth in zip(small_runs, data.semireal, data.truths)]
    s = aggregate(rows)
    wide = {m: s[m]["nmse_wide"]["mean"] for m in s}
    assert wide["smarta+"] < wide["ts"] < wide["raw"]
