"""Per-segment timing of every removal method against a large artifact pool.

The pool is built from continuously stimulated synthetic recordings so that
the target plus ``Q`` donors hold ``pool_segments`` segments. The exact mode
is timed on the same pool with exhaustive time-domain neighbours, over a
subset of target segments.
"""

from __future__ import annotations

import logging
import os
import platform
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy

from .baselines import pulse_blanking, template_subtraction, transient_blanking
from .core import DEFAULT_F_STI, DEFAULT_FS, Recording, StimPeriods, ValidationError
from .library import build_library
from .preprocess import preprocess
from .smarta import SmartaParams, _denoise, _run_segments, _Worker, clean_recording
from .synth import ArtifactModel, LfpSpec, gen_artifact_track, gen_lfp

log = logging.getLogger(__name__)

#: one inter-pulse interval at the nominal rate, the real-time budget per segment
REALTIME_BUDGET_MS = 1000.0 / DEFAULT_F_STI


@dataclass
class BenchConfig:
    pool_segments: int = 50_000
    Q: int = 5
    target_s: float = 30.0
    n_exact: int = 200
    fs: float = DEFAULT_FS
    f_sti: float = DEFAULT_F_STI
    seed: int = 0
    T: int = 50
    leaf_capacity: int = 500
    threads: int = 1
    amplitude_spread: float = 0.05
    # constant gain: under continuous stimulation a modulated gain pushes the
    # weakest pulses below the percentile detection threshold
    model: ArtifactModel = field(default_factory=lambda: ArtifactModel(mod_depth=(0.0, 0.0)))
    lfp: LfpSpec = field(default_factory=LfpSpec)

    def __post_init__(self):
        if self.pool_segments < 100 or self.Q < 1:
            raise ValidationError("benchmark needs pool_segments >= 100 and Q >= 1")
        if self.n_exact < 1:
            raise ValidationError("n_exact must be positive")


def machine_descriptor() -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def continuous_recording(duration_s: float, cfg: BenchConfig, seed: int, id: str,
                         model: ArtifactModel) -> Recording:
    """LFP plus stimulation switched on for the whole recording."""
    lfp, _ = gen_lfp(duration_s, cfg.fs, cfg.lfp, seed=seed, id=id, f_sti=cfg.f_sti)
    n = len(lfp)
    sched = StimPeriods(np.array([[0, n]], dtype=np.int64))
    art = gen_artifact_track(sched, model, cfg.fs, n)
    return Recording(lfp.samples + art, fs=cfg.fs, f_sti=cfg.f_sti, amplitude=model.amplitude,
                     id=id, stim_schedule=sched.to_seconds(cfg.fs))


def _stats(v) -> dict:
    v = np.asarray(v, dtype=float)
    return {"mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)}


def _timed_per_segment(fn, n_seg: int, repeats: int = 3) -> dict:
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        runs.append((time.perf_counter() - t0) * 1000.0 / n_seg)
    return _stats(runs)


def run_benchmark(cfg: BenchConfig | None = None) -> dict:
    """Time all methods on one target against a ``pool_segments`` pool."""
    cfg = cfg or BenchConfig()
    t_start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    seeds = rng.integers(0, 2**31 - 1, size=cfg.Q + 1)
    # donors share the pool with the target's own segments
    target_segments = int(cfg.target_s * cfg.model.pulse_hz)
    donor_s = max(cfg.pool_segments - target_segments, cfg.Q) / cfg.Q / cfg.model.pulse_hz
    donor_s += 2.0 / cfg.model.pulse_hz   # edge pulses whose segment does not fit

    def jitter():
        return cfg.model.scaled(cfg.model.amplitude
                                * (1.0 + cfg.amplitude_spread * rng.uniform(-1, 1)))

    t0 = time.perf_counter()
    donors = [continuous_recording(donor_s, cfg, int(seeds[q]), f"donor{q:02d}", jitter())
              for q in range(cfg.Q)]
    library = build_library(donors)
    t_library = time.perf_counter() - t0

    target = continuous_recording(cfg.target_s, cfg, int(seeds[-1]), "target", cfg.model)
    t0 = time.perf_counter()
    pre = preprocess(target)
    t_pre = time.perf_counter() - t0
    n_seg = pre.segments.n
    params = SmartaParams(Q=cfg.Q, T=cfg.T, leaf_capacity=cfg.leaf_capacity, seed=cfg.seed,
                          threads=cfg.threads)

    t0 = time.perf_counter()
    _, report = clean_recording(target, library, params, pre=pre)
    t_smarta_plus = time.perf_counter() - t0
    pool_size = n_seg + sum(library.get(d).n for d in report.donors)

    # exact neighbours over the same pool, in the time domain
    D_target = _denoise(pre.segments.data, params, [])
    pool_td = np.ascontiguousarray(np.concatenate(
        [D_target.T] + [library.get(d).D.T for d in report.donors]))
    idx = np.linspace(0, n_seg - 1, min(cfg.n_exact, n_seg)).astype(np.int64)
    Xq = np.ascontiguousarray(pre.segments.data.T[idx])
    worker = _Worker(Xq, pool_td, pool_td, np.ascontiguousarray(D_target.T[idx]), params,
                     target.fs, lambda i: None)
    exact = _run_segments(worker, idx.size, cfg.threads)
    exact_ms = np.array([r[3] for r in exact]) / 1000.0

    plus_ms = report.micros / 1000.0
    methods = {
        "smarta+": {**_stats(plus_ms), "recording_s": t_smarta_plus,
                    "per_segment_end_to_end_ms": t_smarta_plus * 1000.0 / n_seg},
        "smarta": {**_stats(exact_ms), "segments_timed": int(idx.size)},
        "ts": _timed_per_segment(lambda: template_subtraction(target, pre.peaks), n_seg),
        "pulse-blank": _timed_per_segment(lambda: pulse_blanking(target, pre.peaks), n_seg),
        "transient-blank": _timed_per_segment(
            lambda: transient_blanking(target, pre.periods), n_seg),
    }
    speedup = methods["smarta"]["mean"] / max(methods["smarta+"]["mean"], 1e-12)
    return {
        "config": {"pool_segments": cfg.pool_segments, "pool_actual": int(pool_size),
                   "Q": cfg.Q, "T": cfg.T, "leaf_capacity": cfg.leaf_capacity,
                   "target_segments": int(n_seg), "seed": cfg.seed, "threads": cfg.threads},
        "machine": machine_descriptor(),
        "methods_ms_per_segment": methods,
        "exact_over_ann": float(speedup),
        "realtime_budget_ms": REALTIME_BUDGET_MS,
        "within_budget": bool(methods["smarta+"]["mean"] <= REALTIME_BUDGET_MS),
        "timing": {"library_s": t_library, "preprocess_s": t_pre,
                   "total_s": time.perf_counter() - t_start},
    }


def quick_config(**kw) -> BenchConfig:
    """Small pool for tests and smoke runs."""
    base = BenchConfig(pool_segments=3000, target_s=5.0, n_exact=20, T=5, leaf_capacity=200)
    return replace(base, **kw)
