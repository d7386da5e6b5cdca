"""Template derivation, windowed overlap-add and the full cleaning pipeline.

:func:`clean_recording` is the library-backed method: approximate neighbours
from a projection forest over pooled wavelet features, a per-segment choice
of K by the artifact-residual index, and two transient-DC detrend passes.
:func:`clean_recording_exact` is the within-recording variant with exhaustive
time-domain neighbours and no DC handling, kept for comparison.
"""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ann, dsp
from .core import Recording, ValidationError
from .library import ArtifactLibrary, RecordingEntry, select_features, select_recordings
from .preprocess import Preprocessed, dc_trend, preprocess
from .shrink import shrink_grouped

log = logging.getLogger(__name__)

AR_EPS = 1e-12
K_GRID = tuple(range(10, 101, 10))
T1_MS = 3.0
T2_MS = 5.2


# ---------------------------------------------------------------------------
# artifact residual index

def _spreads(Z: np.ndarray):
    dev = np.abs(Z - np.median(Z, axis=-1, keepdims=True))
    return np.median(dev, axis=-1), np.percentile(dev, 95, axis=-1)


def _ar_from_spreads(a, b, c, d):
    flag = np.any(np.asarray(a) < AR_EPS) | np.any(np.asarray(b) < AR_EPS) \
        | np.any(np.asarray(c) < AR_EPS) | np.any(np.asarray(d) < AR_EPS)
    a, b, c, d = (np.maximum(v, AR_EPS) for v in (a, b, c, d))
    val = np.abs(np.log(0.5 * (a / b + b / a)) * 0.5 * (c / d + d / c))
    return val, bool(flag)


def ar_index(Z_hat, Z, return_flag: bool = False):
    """Artifact-residual index comparing the spread of ``Z_hat`` against ``Z``.

    Zero when the median absolute deviations of both windows agree. Spreads
    below ``1e-12`` are clamped; ``return_flag=True`` reports whether that
    happened.
    """
    Z_hat = np.asarray(Z_hat, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Z_hat.size == 0 or Z.size == 0:
        raise ValidationError("AR index needs non-empty windows")
    a, c = _spreads(Z_hat)
    b, d = _spreads(Z)
    val, flag = _ar_from_spreads(a, b, c, d)
    val = float(val)
    return (val, flag) if return_flag else val


def ar_rows(Z_hat: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Row-wise :func:`ar_index` for stacked windows (clamping silently)."""
    a, c = _spreads(Z_hat)
    b, d = _spreads(Z)
    return _ar_from_spreads(a, b, c, d)[0]


def ms_to_samples(ms: float, fs: float) -> int:
    return max(1, int(np.floor(ms * fs / 1000.0 + 0.5)))


# ---------------------------------------------------------------------------
# window and overlap-add

@dataclass(frozen=True)
class WindowSpec:
    p: int
    g1: int = 0
    g2: int = 0

    def __post_init__(self):
        if self.g1 < 0 or self.g2 < 0:
            raise ValidationError("overlaps must be non-negative")
        if self.g1 + self.g2 >= self.p:
            raise ValidationError(f"g1 + g2 = {self.g1 + self.g2} must be < p = {self.p}")


def rising_edge(g: int) -> np.ndarray:
    t = np.arange(1, g + 1)
    return np.sin(np.pi * (t - 1) / (2 * g)) ** 2


def window(spec: WindowSpec) -> np.ndarray:
    """Segment weights: sin^2 rise over ``g1``, flat, complementary fall over ``g2``.

    The fall is one minus the next segment's rise at the aligned sample, so the
    weights of two abutting segments sum to one across their overlap.
    """
    w = np.ones(spec.p)
    if spec.g1:
        w[:spec.g1] = rising_edge(spec.g1)
    if spec.g2:
        w[spec.p - spec.g2:] = 1.0 - rising_edge(spec.g2)
    return w


def segment_overlaps(starts: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment ``(g1, g2)`` from the actual overlap with its neighbours."""
    starts = np.asarray(starts, dtype=np.int64)
    ov = np.maximum(0, starts[:-1] + p - starts[1:]) if starts.size > 1 else np.zeros(0, np.int64)
    g1 = np.concatenate([[0], ov]).astype(np.int64)
    g2 = np.concatenate([ov, [0]]).astype(np.int64)
    return g1, g2


def overlap_add(templates: np.ndarray, starts, n_samples: int,
                g1=None, g2=None) -> np.ndarray:
    """Blend per-segment templates (rows, length ``p``) into one track.

    Overlaps default to those implied by ``starts``; samples outside every
    segment stay zero.
    """
    T = np.asarray(templates, dtype=float)
    starts = np.asarray(starts, dtype=np.int64)
    if T.ndim != 2 or T.shape[0] != starts.size:
        raise ValidationError("templates must be (n_segments, p)")
    if starts.size > 1 and np.any(np.diff(starts) <= 0):
        raise ValidationError("segment starts must be strictly increasing")
    p = T.shape[1]
    if g1 is None or g2 is None:
        g1, g2 = segment_overlaps(starts, p)
    out = np.zeros(n_samples)
    cache: dict = {}
    for i, s in enumerate(starts):
        key = (int(g1[i]), int(g2[i]))
        w = cache.get(key)
        if w is None:
            w = cache[key] = window(WindowSpec(p, *key))
        lo, hi = max(s, 0), min(s + p, n_samples)
        if hi > lo:
            out[lo:hi] += (w * T[i])[lo - s:hi - s]
    return out


# ---------------------------------------------------------------------------
# templates

@dataclass(frozen=True)
class TemplateResult:
    template: np.ndarray
    K_opt: int
    ar_curve: np.ndarray
    flag: str = ""


def templates_for_neighbours(x: np.ndarray, neighbours: np.ndarray, K_grid, n_hat: int,
                             n_tail: int) -> TemplateResult:
    """Median template per K over the first K rows of ``neighbours``; pick min AR.

    ``neighbours`` are time-domain segments sorted nearest first.
    """
    n_avail = neighbours.shape[0]
    Ks = [min(K, n_avail) for K in K_grid]
    meds = np.stack([np.median(neighbours[:K], axis=0) for K in Ks])
    R = x[None, :] - meds
    curve = ar_rows(R[:, :n_hat], R[:, -n_tail:])
    curve = np.where(np.isfinite(curve), curve, np.inf)
    j = int(np.argmin(curve))
    return TemplateResult(meds[j], int(K_grid[j]), curve)


def derive_template(x, candidates, pool_features, pool_segments, query_feature,
                    K_grid=K_GRID, fs: float = 22000.0, t1_ms: float = T1_MS,
                    t2_ms: float = T2_MS, fallback=None) -> TemplateResult:
    """Template for one raw segment ``x`` from a candidate set of the pool.

    Parameters
    ----------
    candidates : int array
        Row indices into ``pool_features`` / ``pool_segments``.
    pool_features : (n_pool, k) array
        Search space for the K nearest neighbours.
    pool_segments : (n_pool, p) array
        Denoised time-domain segments the median is taken over.
    fallback : callable, optional
        Returns a replacement candidate set when ``candidates`` is empty.
    """
    x = np.asarray(x, dtype=float)
    cand = np.asarray(candidates, dtype=np.int64)
    flag = ""
    if cand.size == 0 and fallback is not None:
        cand = np.asarray(fallback(), dtype=np.int64)
        flag = "fallback: exact within-recording neighbours"
    if cand.size == 0:
        return TemplateResult(np.zeros_like(x), int(K_grid[0]),
                              np.full(len(K_grid), np.nan), "no candidates: zero template")
    nn = ann.knn(pool_features, cand, query_feature, max(K_grid))
    res = templates_for_neighbours(x, pool_segments[nn], K_grid,
                                   ms_to_samples(t1_ms, fs), ms_to_samples(t2_ms, fs))
    return TemplateResult(res.template, res.K_opt, res.ar_curve, flag) if flag else res


# ---------------------------------------------------------------------------
# pipeline

@dataclass
class SmartaParams:
    Q: int = 5
    leaf_capacity: int = 500
    T: int = 50
    K_grid: tuple = K_GRID
    seed: int = 0
    t1_ms: float = T1_MS
    t2_ms: float = T2_MS
    group: int = 500
    k_shrink: int = 10
    threads: int = 1

    def __post_init__(self):
        self.K_grid = tuple(int(k) for k in self.K_grid)
        if not self.K_grid or min(self.K_grid) < 1:
            raise ValidationError("K_grid must hold positive integers")
        if self.Q < 0 or self.T < 1 or self.leaf_capacity < 1:
            raise ValidationError("Q >= 0, T >= 1 and leaf_capacity >= 1 required")


@dataclass
class CleanReport:
    method: str
    recording_id: str
    peak_sample: np.ndarray
    K_opt: np.ndarray
    ar: np.ndarray
    micros: np.ndarray
    donors: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    artifact: Optional[np.ndarray] = field(default=None, repr=False)
    trend: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_segments(self) -> int:
        return int(self.peak_sample.size)

    def to_dict(self, timing: bool = True) -> dict:
        segs = []
        for i in range(self.n_segments):
            row = {"peak_sample": int(self.peak_sample[i]), "K_opt": int(self.K_opt[i]),
                   "ar": float(self.ar[i])}
            if timing:
                row["micros_elapsed"] = float(self.micros[i])
            segs.append(row)
        return {"method": self.method, "recording_id": self.recording_id,
                "donors": list(self.donors), "flags": list(self.flags), "segments": segs}


def _empty_report(method, rec, flags) -> CleanReport:
    z = np.zeros(0)
    return CleanReport(method, rec.id, np.zeros(0, np.int64), np.zeros(0, np.int64), z, z,
                       flags=flags)


def _denoise(X: np.ndarray, params: SmartaParams, flags: list) -> np.ndarray:
    try:
        return shrink_grouped(X, group=params.group, k=params.k_shrink)
    except ValidationError as exc:
        flags.append(f"denoising skipped: {exc}")
        return X.copy()


class _Worker:
    """Per-segment template derivation over a fixed pool."""

    def __init__(self, X, pool_feat, pool_seg, query_feat, params, fs, candidates_of):
        self.X, self.pool_feat, self.pool_seg = X, pool_feat, pool_seg
        self.query_feat, self.params, self.fs = query_feat, params, fs
        self.candidates_of = candidates_of
        self.n_hat = ms_to_samples(params.t1_ms, fs)
        self.n_tail = ms_to_samples(params.t2_ms, fs)

    def run(self, idx: np.ndarray):
        K_max = max(self.params.K_grid)
        out = []
        for i in idx:
            t0 = time.perf_counter_ns()
            cand = self.candidates_of(i)
            flag = ""
            if cand is None:
                diff = self.pool_feat - self.query_feat[i]
                nn = ann.nearest_order(np.einsum("ij,ij->i", diff, diff),
                                       np.arange(self.pool_feat.shape[0]), K_max)
            elif cand.size == 0:
                out.append((np.zeros(self.X.shape[1]), self.params.K_grid[0], np.nan,
                            (time.perf_counter_ns() - t0) / 1e3, "no candidates"))
                continue
            else:
                nn = ann.knn(self.pool_feat, cand, self.query_feat[i], K_max)
            res = templates_for_neighbours(self.X[i], self.pool_seg[nn], self.params.K_grid,
                                           self.n_hat, self.n_tail)
            out.append((res.template, res.K_opt, float(res.ar_curve.min()),
                        (time.perf_counter_ns() - t0) / 1e3, flag))
        return out


def _run_segments(worker: _Worker, n: int, threads: int):
    idx = np.arange(n)
    if threads <= 1 or n < 2:
        return worker.run(idx)
    chunks = np.array_split(idx, threads)
    with ThreadPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(worker.run, chunks))
    return [r for part in parts for r in part]


def _collect(results, method, rec, peaks, flags):
    templates = np.stack([r[0] for r in results])
    K = np.array([r[1] for r in results], dtype=np.int64)
    ar = np.array([r[2] for r in results])
    micros = np.array([r[3] for r in results])
    for i, r in enumerate(results):
        if r[4]:
            flags.append(f"segment {i}: {r[4]}")
    return templates, CleanReport(method, rec.id, np.asarray(peaks, np.int64), K, ar, micros,
                                  flags=flags)


def _candidate_lookup(forest: ann.ProjectionForest, leaves: np.ndarray):
    offsets = []
    for tree in forest.trees:
        sizes = np.array([lf.size for lf in tree.leaves])
        offsets.append(np.concatenate([[0], np.cumsum(sizes)]))
    flat = [np.concatenate(tree.leaves).astype(np.int64) for tree in forest.trees]
    # scratch mask per worker thread
    local = threading.local()

    def candidates_of(i):
        mask = getattr(local, "mask", None)
        if mask is None:
            mask = local.mask = np.zeros(forest.n_points, dtype=bool)
        parts = [flat[t][offsets[t][l]:offsets[t][l + 1]] for t, l in enumerate(leaves[:, i])]
        mask[np.concatenate(parts)] = True
        out = np.flatnonzero(mask)
        mask[out] = False
        return out

    return candidates_of


def donor_pool(target: RecordingEntry, library: ArtifactLibrary, Q: int, flags: list):
    """Target plus up to ``Q`` amplitude-compatible donors, and the feature subset."""
    others = [e for e in library.entries if e.id != target.id and e.q == target.q]
    if others:
        feats = select_features(others + [target])
        donors = select_recordings(ArtifactLibrary(tuple(others)), target, Q, feats)
    else:
        feats = select_features([target.s_m, np.zeros_like(target.s_m)])
        donors = []
        flags.append("library empty: pooling target segments only")
    return [target] + [e for e in others if e.id in donors], feats, donors


def _no_stimulation(rec: Recording, method: str, detrend: bool):
    x = rec.samples
    trend = dc_trend(x, rec.fs, []) if detrend else np.zeros_like(x)
    report = _empty_report(method, rec, ["no stimulation detected"])
    report.artifact = np.zeros_like(x)
    report.trend = trend
    return rec.with_samples(x - trend), report


def clean_recording(rec: Recording, library: ArtifactLibrary,
                    params: SmartaParams | None = None,
                    pre: Preprocessed | None = None):
    """Remove stimulus and transient-DC artifacts with the library-backed method.

    Returns ``(cleaned, report)``. ``report.artifact`` holds the overlap-added
    template track and ``report.trend`` the sum of both detrend passes.
    """
    params = params or SmartaParams()
    pre = pre if pre is not None else preprocess(rec)
    if pre.peaks.size == 0:
        return _no_stimulation(rec, "smarta+", detrend=True)
    flags: list = []
    segs = pre.segments
    if segs.n == 0:
        return _no_stimulation(rec, "smarta+", detrend=True)
    X = segs.data
    D = _denoise(X, params, flags)
    W = dsp.haar_forward(D)
    target = RecordingEntry(id=rec.id, a_m=float(X.max(axis=0).mean()),
                            s_m=np.median(W, axis=1), W=W, D=D, X=X,
                            peak_times=segs.peak_times, onset_offsets=np.zeros(0),
                            fs=rec.fs, f_sti=rec.f_sti)

    pool_entries, feats, donors = donor_pool(target, library, params.Q, flags)
    sel = feats.selected_idx
    pool_feat = np.ascontiguousarray(np.concatenate([e.W[sel].T for e in pool_entries]))
    pool_seg = np.ascontiguousarray(np.concatenate([e.D.T for e in pool_entries]))
    query_feat = np.ascontiguousarray(W[sel].T)

    forest = ann.build_forest(pool_feat, T=params.T, leaf_capacity=params.leaf_capacity,
                              seed=params.seed)
    leaves = forest.route(query_feat)
    worker = _Worker(X.T, pool_feat, pool_seg, query_feat, params, rec.fs,
                     _candidate_lookup(forest, leaves))
    results = _run_segments(worker, segs.n, params.threads)
    templates, report = _collect(results, "smarta+", rec, segs.peak_times, flags)
    report.donors = donors

    artifact = overlap_add(templates, segs.starts, len(rec))
    residual = pre.detrended - artifact
    trend2 = dc_trend(residual, rec.fs, pre.periods)
    report.artifact = artifact
    report.trend = pre.trend + trend2
    return rec.with_samples(residual - trend2), report


def clean_recording_exact(rec: Recording, params: SmartaParams | None = None,
                          pre: Preprocessed | None = None):
    """Within-recording variant: exhaustive time-domain KNN, no DC handling."""
    params = params or SmartaParams()
    pre = pre if pre is not None else preprocess(rec, detrend=False)
    if pre.peaks.size == 0 or pre.segments.n == 0:
        return _no_stimulation(rec, "smarta", detrend=False)
    flags: list = []
    segs = pre.segments
    X = segs.data
    D = _denoise(X, params, flags)
    Dt = np.ascontiguousarray(D.T)
    worker = _Worker(X.T, Dt, Dt, Dt, params, rec.fs, lambda i: None)
    results = _run_segments(worker, segs.n, params.threads)
    templates, report = _collect(results, "smarta", rec, segs.peak_times, flags)
    artifact = overlap_add(templates, segs.starts, len(rec))
    report.artifact = artifact
    report.trend = pre.trend
    return rec.with_samples(pre.detrended - artifact), report
