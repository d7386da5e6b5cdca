"""Comparison methods: causal template subtraction, pulse blanking and
transient blanking."""

from __future__ import annotations

import numpy as np

from .core import Recording, StimPeriods
from .preprocess import segment
from .smarta import overlap_add

PULSE_BLANK_MS = 2.5
PULSE_PRE_BLANK_MS = 0.5
TRANSIENT_BLANK_MS = 550.0


def template_subtraction(rec: Recording, peak_times, k_hist: int = 10):
    """Subtract the mean of the previous ``k_hist`` segments from each segment.

    The first segment has no history and passes through. Templates are blended
    with the same overlap window as the library method. Returns
    ``(cleaned, artifact_track)``.
    """
    segs = segment(rec, peak_times)
    if segs.n == 0:
        return rec, np.zeros(len(rec))
    X = segs.data
    csum = np.concatenate([np.zeros((X.shape[0], 1)), np.cumsum(X, axis=1)], axis=1)
    i = np.arange(segs.n)
    lo = np.maximum(i - k_hist, 0)
    count = i - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        T = (csum[:, i] - csum[:, lo]) / count
    T[:, count == 0] = 0.0
    artifact = overlap_add(T.T, segs.starts, len(rec))
    return rec.with_samples(rec.samples - artifact), artifact


def pulse_blanking(rec: Recording, peak_times, blank_ms: float = PULSE_BLANK_MS,
                   pre_blank_ms: float = PULSE_PRE_BLANK_MS) -> Recording:
    """Replace ``blank_ms`` around each peak by a line between the boundary samples."""
    x = np.array(rec.samples)
    n = x.size
    width = int(round(blank_ms * rec.fs / 1000.0))
    pre = int(round(pre_blank_ms * rec.fs / 1000.0))
    for pk in np.asarray(peak_times, dtype=np.int64):
        a, b = max(pk - pre, 0), min(pk - pre + width, n)
        if b <= a:
            continue
        left = x[a - 1] if a > 0 else None
        right = x[b] if b < n else None
        if left is None and right is None:
            x[a:b] = 0.0
        elif left is None or right is None:
            x[a:b] = left if right is None else right
        else:
            frac = np.arange(1, b - a + 1) / (b - a + 1)
            x[a:b] = left + frac * (right - left)
    return rec.with_samples(x)


def transient_blanking(rec: Recording, periods: StimPeriods,
                       blank_ms: float = TRANSIENT_BLANK_MS):
    """Zero the first ``blank_ms`` of every stimulation period.

    Returns ``(blanked, mask)``; the mask marks the zeroed samples so event
    detection can ignore them.
    """
    x = np.array(rec.samples)
    mask = np.zeros(x.size, dtype=bool)
    width = int(round(blank_ms * rec.fs / 1000.0))
    for a, b in periods:
        mask[max(a, 0):min(a + width, b, x.size)] = True
    x[mask] = 0.0
    return rec.with_samples(x), mask
