"""Artifact-removal metrics: artifact residual, spectral concentration,
band-limited NMSE and temporal event matching."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .core import EventList, ValidationError
from .smarta import AR_EPS, T1_MS, T2_MS, _ar_from_spreads, _spreads, ms_to_samples

NMSE_FLOOR_DB = -120.0
AR_NEIGHBOURS = 20

BANDS = {
    "alpha": (4.0, 8.0),
    "beta": (13.0, 35.0),
    "gamma": (60.0, 90.0),
    "hfo": (200.0, 400.0),
    "vhfo1": (400.0, 1000.0),
    "vhfo2": (1000.0, 3000.0),
}

#: stimulation lines of the reference hardware: the 129.16 Hz train and its
#: aliased images at 42.8 and 86.36 Hz
SC_BASE_HZ = 129.16
SC_ALIAS_HZ = (42.8, 86.36)


def sc_grid(base: float = SC_BASE_HZ, aliases=SC_ALIAS_HZ) -> np.ndarray:
    f = [base * n for n in (1, 2, 3)]
    f += [a + base * m for a in aliases for m in range(4)]
    return np.array(sorted(f))


# ---------------------------------------------------------------------------
# AR

def signal_ar(estimate, peak_times, fs: float, pre: int, post: int,
              t1_ms: float = T1_MS, t2_ms: float = T2_MS,
              neighbours: int = AR_NEIGHBOURS, return_count: bool = False):
    """Mean AR index over all segments of ``estimate``.

    Segment ``i`` is compared against the pooled tails of segments
    ``i - neighbours .. i + neighbours`` (clipped at the ends). Segments with a
    zero spread in either window (blanked stretches) have no defined index
    and are left out of the mean; ``return_count=True`` also returns how many
    segments were used.
    """
    x = np.asarray(estimate, dtype=float)
    pk = np.asarray(peak_times, dtype=np.int64)
    pk = pk[(pk - pre >= 0) & (pk + post <= x.size)]
    if pk.size == 0:
        raise ValidationError("signal AR needs at least one complete segment")
    p = pre + post
    segs = x[(pk - pre)[:, None] + np.arange(p)[None, :]]
    heads = segs[:, :ms_to_samples(t1_ms, fs)]
    tails = segs[:, p - ms_to_samples(t2_ms, fs):]
    n = pk.size
    vals = np.full(n, np.nan)
    for i in range(n):
        lo, hi = max(0, i - neighbours), min(n, i + neighbours + 1)
        a, c = _spreads(heads[i])
        b, d = _spreads(tails[lo:hi].reshape(-1))
        if min(a, b, c, d) >= AR_EPS:
            vals[i] = _ar_from_spreads(a, b, c, d)[0]
    used = int(np.isfinite(vals).sum())
    out = float(np.nanmean(vals)) if used else float("nan")
    return (out, used) if return_count else out


# ---------------------------------------------------------------------------
# SC

def _sc_from_psd(f, P, f_c, nyq, flags):
    lo2, hi2 = f_c - 20.0, f_c + 20.0
    if lo2 <= 0 or hi2 >= nyq:
        lo2, hi2 = max(lo2, f[1] if f.size > 1 else 0.0), min(hi2, nyq)
        flags.append(f"F2 narrowed to [{lo2:g}, {hi2:g}] Hz at f_c={f_c:g}")
    # Welch bin frequencies carry round-off, so the band edges get a tolerance
    tol = 1e-9 * max(f_c, 1.0)
    num = P[np.abs(f - f_c) <= 1.0 + tol].sum()
    den = P[(f >= lo2 - tol) & (f <= hi2 + tol)].sum()
    if den <= 0:
        flags.append(f"no power near {f_c:g} Hz")
        return 0.0
    return float(num / den)


def spectral_concentration(x, fs: float, f_c=None, return_flags: bool = False):
    """Fraction of the power within 20 Hz of ``f_c`` that lies within 1 Hz.

    ``f_c`` may be a scalar or a sequence (mean returned). Defaults to
    :func:`sc_grid`.
    """
    f, P = dsp.welch_psd(x, fs)
    fc = sc_grid() if f_c is None else np.atleast_1d(np.asarray(f_c, dtype=float))
    flags: list = []
    vals = [_sc_from_psd(f, P, c, fs / 2.0, flags) for c in fc]
    for msg in flags:
        if msg.startswith("F2"):
            warnings.warn(msg, stacklevel=2)
    out = float(np.mean(vals))
    return (out, flags) if return_flags else out


# ---------------------------------------------------------------------------
# NMSE

def band_filter(band, fs: float, order: int = 4):
    return dsp.design_filter("butterworth_bp", order, band, fs=fs)


def _nmse_db(err_energy: float, truth_energy: float) -> float:
    if not truth_energy > 0:
        raise ValidationError("NMSE undefined for an all-zero truth")
    if err_energy <= 0:
        return NMSE_FLOOR_DB
    return max(10.0 * np.log10(err_energy / truth_energy), NMSE_FLOOR_DB)


def nmse(estimate, truth, band=None, fs: float = 22000.0) -> float:
    """Normalized squared error in dB, optionally after a zero-phase band-pass."""
    e = np.asarray(estimate, dtype=float)
    z = np.asarray(truth, dtype=float)
    if e.shape != z.shape:
        raise ValidationError(f"length mismatch {e.shape} vs {z.shape}")
    if band is not None:
        bf = band_filter(tuple(band), fs)
        z = dsp.filtfilt(bf, z)
        # linearity: filtering the difference equals the difference of filtered signals
        d = dsp.filtfilt(bf, e - np.asarray(truth, dtype=float))
    else:
        d = e - z
    return _nmse_db(float(np.dot(d, d)), float(np.dot(z, z)))


class BandNmse:
    """NMSE in several bands with the band-passed truth computed once."""

    def __init__(self, truth, fs: float, bands: dict = BANDS):
        self.truth = np.asarray(truth, dtype=float)
        self.fs = fs
        self.filters = {k: band_filter(v, fs) for k, v in bands.items()}
        self.energy = {k: float(np.sum(dsp.filtfilt(f, self.truth) ** 2))
                       for k, f in self.filters.items()}
        self.energy["wide"] = float(np.dot(self.truth, self.truth))

    def __call__(self, estimate) -> dict:
        d = np.asarray(estimate, dtype=float) - self.truth
        out = {"wide": _nmse_db(float(np.dot(d, d)), self.energy["wide"])}
        for k, f in self.filters.items():
            df = dsp.filtfilt(f, d)
            out[k] = _nmse_db(float(np.dot(df, df)), self.energy[k])
        return out


# ---------------------------------------------------------------------------
# event matching

@dataclass
class MatchResult:
    tp: int
    fn: int
    fp: int
    recall: float
    precision: float
    f1: float
    deviation: np.ndarray = field(default_factory=lambda: np.zeros(0))
    or1: np.ndarray = field(default_factory=lambda: np.zeros(0))
    or2: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tp_truth: int = 0
    flags: list = field(default_factory=list)

    @property
    def mean_deviation(self) -> float:
        return float(self.deviation.mean()) if self.deviation.size else float("nan")


def _overlap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise overlap lengths between interval arrays ``a`` (k,2) and ``b`` (m,2)."""
    lo = np.maximum(a[:, None, 0], b[None, :, 0])
    hi = np.minimum(a[:, None, 1], b[None, :, 1])
    return np.maximum(hi - lo, 0.0)


def restrict_to_windows(events: EventList, windows) -> EventList:
    """Events overlapping at least one ``(start, end)`` window (seconds)."""
    ev = np.asarray(events.events, dtype=float).reshape(-1, 2)
    w = np.asarray(windows, dtype=float).reshape(-1, 2)
    if ev.size == 0 or w.size == 0:
        return EventList(np.zeros((0, 2)))
    keep = (_overlap(ev, w) > 0).any(axis=1)
    return EventList(ev[keep])


def onset_windows(onsets_s, width_s: float = 0.05) -> np.ndarray:
    on = np.asarray(onsets_s, dtype=float).reshape(-1)
    return np.column_stack([on, on + width_s])


def match_events(detected: EventList, truth: EventList, one_to_one: bool = False,
                 windows=None) -> MatchResult:
    """Overlap-based TP/FN/FP classification with per-TP deviation and overlap ratios.

    By default several detections may match the same truth event. Recall is
    counted over truth events and precision over detections. With
    ``windows`` both lists are first restricted to events overlapping one of
    them.
    """
    if windows is not None:
        detected = restrict_to_windows(detected, windows)
        truth = restrict_to_windows(truth, windows)
    D = np.asarray(detected.events, dtype=float).reshape(-1, 2)
    G = np.asarray(truth.events, dtype=float).reshape(-1, 2)
    flags: list = []
    ov = _overlap(D, G) if D.size and G.size else np.zeros((D.shape[0], G.shape[0]))
    hit = ov > 0
    if one_to_one:
        pairs = np.argwhere(hit)
        order = np.lexsort((pairs[:, 0], pairs[:, 1], -ov[hit])) if pairs.size else []
        used_d, used_g, match = set(), set(), {}
        for k in order:
            i, j = pairs[k]
            if i not in used_d and j not in used_g:
                used_d.add(i); used_g.add(j); match[i] = j
        tp_det, tp_truth = len(match), len(match)
    else:
        match = {i: int(np.argmax(ov[i])) for i in range(D.shape[0]) if hit[i].any()}
        tp_det = len(match)
        tp_truth = int(hit.any(axis=0).sum()) if G.size else 0
    fp = D.shape[0] - tp_det
    fn = G.shape[0] - tp_truth
    if G.shape[0] == 0:
        recall = 0.0
        flags.append("recall undefined: no truth events")
    else:
        recall = tp_truth / G.shape[0]
    if D.shape[0] == 0:
        precision = 0.0
        flags.append("precision undefined: no detections")
    else:
        precision = tp_det / D.shape[0]
    f1 = 2 * recall * precision / (recall + precision) if recall + precision > 0 else 0.0
    idx = sorted(match)
    if idx:
        d = D[idx]
        g = G[[match[i] for i in idx]]
        d1 = np.abs(d[:, 0] - g[:, 0])
        d2 = np.abs(d[:, 1] - g[:, 1])
        d3 = ov[idx, [match[i] for i in idx]]
        dev, or1, or2 = d1 + d2, d3 / (d1 + d3), d3 / (d2 + d3)
    else:
        dev = or1 = or2 = np.zeros(0)
    return MatchResult(tp_det, fn, fp, float(recall), float(precision), float(f1),
                       dev, or1, or2, tp_truth, flags)
