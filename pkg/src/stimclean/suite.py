"""End-to-end reproduction suite: synthesize aDBS recordings, build the
library, construct semi-real signals, run every method and score them."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import adbs
from .baselines import pulse_blanking, template_subtraction, transient_blanking
from .core import DEFAULT_F_STI, DEFAULT_FS, ValidationError
from .evaluation import (BandNmse, match_events, onset_windows, signal_ar,
                         spectral_concentration)
from .library import build_library
from .preprocess import preprocess
from .smarta import SmartaParams, clean_recording, clean_recording_exact
from .synth import ArtifactModel, LfpSpec, gen_lfp, make_semireal

log = logging.getLogger(__name__)

METHODS = ("raw", "smarta+", "smarta", "ts", "pulse-blank", "transient-blank")


@dataclass
class SuiteConfig:
    n_recordings: int = 10
    duration_s: float = 120.0
    fs: float = DEFAULT_FS
    f_sti: float = DEFAULT_F_STI
    seed: int = 0
    Q: int = 5
    leaf_capacity: int = 500
    T: int = 50
    K_grid: tuple = tuple(range(10, 101, 10))
    semireal_K: int = 500
    amplitude: float = 1000.0
    amplitude_spread: float = 0.08
    shape_spread: float = 0.1
    methods: tuple = METHODS
    threads: int = 1
    lfp: LfpSpec = field(default_factory=LfpSpec)
    model: ArtifactModel = field(default_factory=ArtifactModel)
    beta: adbs.BetaConfig = field(default_factory=adbs.BetaConfig)

    def __post_init__(self):
        if self.n_recordings < 1:
            raise ValidationError("suite needs at least one recording")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValidationError(f"unknown methods {sorted(bad)}")

    def params(self) -> SmartaParams:
        return SmartaParams(Q=self.Q, leaf_capacity=self.leaf_capacity, T=self.T,
                            K_grid=self.K_grid, seed=self.seed, threads=self.threads)


def recording_model(base: ArtifactModel, cfg: SuiteConfig, rng) -> ArtifactModel:
    """Per-recording artifact: amplitude and shape jittered around ``base``."""
    u = lambda: 1.0 + cfg.shape_spread * rng.uniform(-1, 1)
    return replace(base,
                   amplitude=cfg.amplitude * (1.0 + cfg.amplitude_spread * rng.uniform(-1, 1)),
                   width_ms=base.width_ms * u(), second_ratio=base.second_ratio * u(),
                   tail_ratio=base.tail_ratio * u(), tail_ms=base.tail_ms * u(),
                   mod_phase=tuple(rng.uniform(0, 2 * np.pi, len(base.mod_phase))))


@dataclass
class SuiteData:
    adbs: list
    library: object
    semireal: list
    truths: list
    base_events: list


def generate(cfg: SuiteConfig) -> SuiteData:
    ss = np.random.SeedSequence(cfg.seed)
    children = ss.spawn(cfg.n_recordings)
    results = []
    for m, child in enumerate(children):
        s_lfp, s_base, s_model = (int(c.generate_state(1)[0]) for c in child.spawn(3))
        lfp, _ = gen_lfp(cfg.duration_s, cfg.fs, cfg.lfp, seed=s_lfp, id=f"lfp{m:02d}",
                         f_sti=cfg.f_sti)
        model = recording_model(cfg.model, cfg, np.random.default_rng(s_model))
        res = adbs.simulate_adbs(lfp, model, cfg.beta, id=f"adbs{m:02d}")
        base, events = gen_lfp(cfg.duration_s, cfg.fs, cfg.lfp, seed=s_base,
                               id=f"base{m:02d}", f_sti=cfg.f_sti)
        results.append((res, base, events))
        log.info("recording %d: on-fraction %.2f (clean %.2f)", m, res.on_fraction(),
                 res.clean_on_fraction())
    recs = [r[0].recording for r in results]
    library = build_library(recs)
    semis, truths = [], []
    for (res, base, _), rec in zip(results, recs):
        semi, truth = make_semireal(rec, library, base, K=cfg.semireal_K, Q=cfg.Q, T=cfg.T,
                                    leaf_capacity=cfg.leaf_capacity, seed=cfg.seed,
                                    id=f"semi-{rec.id}")
        semis.append(semi)
        truths.append(truth)
    return SuiteData([r[0] for r in results], library, semis, truths, [r[2] for r in results])


def run_methods(semi, library, cfg: SuiteConfig, source_id: str):
    """Apply every configured method to one semi-real recording.

    Returns ``{method: (samples, per_segment_ms, mask)}`` plus the shared
    preprocessing.
    """
    pre = preprocess(semi)
    peaks = pre.peaks
    out = {}
    n_seg = max(pre.segments.n, 1)
    for method in cfg.methods:
        t0 = time.perf_counter()
        mask = None
        if method == "raw":
            y = semi.samples
        elif method == "smarta+":
            y = clean_recording(semi, library.without(source_id), cfg.params(), pre=pre)[0].samples
        elif method == "smarta":
            y = clean_recording_exact(semi, cfg.params())[0].samples
        elif method == "ts":
            y = template_subtraction(semi, peaks)[0].samples
        elif method == "pulse-blank":
            y = pulse_blanking(semi, peaks).samples
        else:
            rec, mask = transient_blanking(semi, pre.periods)
            y = rec.samples
        elapsed = (time.perf_counter() - t0) * 1000.0 / n_seg
        out[method] = (np.asarray(y), elapsed, mask)
    return out, pre


METRICS = ("nmse", "ar", "sc", "events")


def truth_events(base_lfp, fs: float, beta: adbs.BetaConfig):
    """Offline beta events of the base LFP and the threshold and peak used."""
    amp, peak_hz = adbs.beta_amplitude(base_lfp, fs, beta)
    thr = adbs.calibrate_threshold(amp, beta, n_baseline=amp.size)
    return adbs.detect_beta_events(amp, thr, fs, beta.min_on_ms), thr, peak_hz


def score(outputs: dict, base_lfp, schedule, peaks, fs: float, pre: int, post: int,
          beta: adbs.BetaConfig = adbs.BetaConfig(), metrics=METRICS) -> dict:
    """Metric rows per method for estimates of ``base_lfp``.

    ``outputs`` maps a method name to ``(samples, ms_per_segment, mask)``.
    Ground-truth beta events come from the base LFP with the offline
    pipeline; every estimate is labelled with the same threshold and peak.
    """
    bad = set(metrics) - set(METRICS)
    if bad:
        raise ValidationError(f"unknown metrics {sorted(bad)}")
    peaks = np.asarray(peaks, dtype=np.int64)
    if "nmse" in metrics:
        bn = BandNmse(base_lfp, fs)
    if "events" in metrics:
        truth_ev, thr, peak_hz = truth_events(base_lfp, fs, beta)
        onsets = np.asarray(schedule.onsets, dtype=float) / fs
        windows = onset_windows(onsets)
    rows = {}
    for method, (y, ms_per_seg, mask) in outputs.items():
        row: dict = {}
        if "nmse" in metrics:
            row.update({f"nmse_{k}": v for k, v in bn(y).items()})
        if "ar" in metrics:
            row["ar"] = signal_ar(y, peaks, fs, pre, post) if peaks.size else float("nan")
        if "sc" in metrics:
            row["sc"] = spectral_concentration(y, fs)
        if "events" in metrics:
            amp, _ = adbs.beta_amplitude(y, fs, beta, peak_hz=peak_hz)
            det = adbs.detect_beta_events(amp, thr, fs, beta.min_on_ms, mask=mask)
            overall = match_events(det, truth_ev)
            onset = match_events(det, truth_ev, windows=windows)
            row.update({
                "recall": overall.recall, "precision": overall.precision, "f1": overall.f1,
                "deviation_ms": overall.mean_deviation * 1000.0,
                "or1": float(overall.or1.mean()) if overall.or1.size else float("nan"),
                "or2": float(overall.or2.mean()) if overall.or2.size else float("nan"),
                "f1_onset": onset.f1, "recall_onset": onset.recall,
                "precision_onset": onset.precision,
            })
        if ms_per_seg is not None and np.isfinite(ms_per_seg):
            row["ms_per_segment"] = ms_per_seg
        rows[method] = row
    return rows


def aggregate(per_rec: list) -> dict:
    methods = list(per_rec[0])
    out = {}
    for m in methods:
        keys = per_rec[0][m].keys()
        out[m] = {}
        for k in keys:
            v = np.array([r[m][k] for r in per_rec], dtype=float)
            v = v[np.isfinite(v)]
            out[m][k] = {"mean": float(v.mean()) if v.size else float("nan"),
                         "std": float(v.std()) if v.size else float("nan")}
    return out


def report_hash(report: dict) -> str:
    """Digest of the report without wall-clock fields."""
    def strip(o):
        if isinstance(o, dict):
            return {k: strip(v) for k, v in o.items() if k not in ("ms_per_segment", "timing")}
        if isinstance(o, list):
            return [strip(v) for v in o]
        return o
    blob = json.dumps(strip(report), sort_keys=True, default=float).encode()
    return hashlib.sha256(blob).hexdigest()


def run_suite(cfg: SuiteConfig | None = None, data: SuiteData | None = None) -> dict:
    """Generate, clean and score; the report mirrors method x metric tables."""
    cfg = cfg or SuiteConfig()
    t0 = time.perf_counter()
    data = data or generate(cfg)
    per_rec = []
    for semi, truth, res, events in zip(data.semireal, data.truths, data.adbs, data.base_events):
        outputs, pre = run_methods(semi, data.library, cfg, res.recording.id)
        per_rec.append(score(outputs, truth.base_lfp, truth.schedule, pre.peaks, semi.fs,
                             semi.pre_samples, semi.post_samples, cfg.beta))
    report = {
        "config": {"n_recordings": cfg.n_recordings, "duration_s": cfg.duration_s,
                   "fs": cfg.fs, "f_sti": cfg.f_sti, "seed": cfg.seed, "Q": cfg.Q,
                   "leaf_capacity": cfg.leaf_capacity, "T": cfg.T},
        "controller": [{"id": r.recording.id, "on_fraction": r.on_fraction(),
                        "clean_on_fraction": r.clean_on_fraction(),
                        "threshold": r.threshold, "peak_hz": r.peak_hz} for r in data.adbs],
        "summary": aggregate(per_rec),
        "per_recording": per_rec,
        "timing": {"total_s": time.perf_counter() - t0},
    }
    report["hash"] = report_hash(report)
    return report
