"""Artifact peak detection, stimulation-period identification, transient-DC
detrending and segmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as L
from scipy.signal import find_peaks

from . import dsp
from .core import TAU_MS, Recording, SegmentMatrix, StimPeriods, ValidationError

log = logging.getLogger(__name__)

HP_CUTOFF_HZ = 300.0
HP_ORDER = 3
TREND_WIN_MS = 1000.0
SMOOTH_WIN_MS = 0.5
PEAK_PERCENTILE = 95.0
# Peaks must also clear this multiple of the median processed sample. Without
# it the 95th percentile lands in the noise floor whenever stimulation covers
# only a few percent of the recording.
MIN_PEAK_RATIO = 5.0
GAP_MAX_PERIODS = 2.5

DC_SMOOTH_MS = 10.0
STIM_DEGREE = 6
GAP_DEGREE = 1


class NoStimulationError(ValidationError):
    """Raised when no stimulus artifacts are found in a recording."""


def _rectified(rec: Recording) -> np.ndarray:
    hp = dsp.design_filter("butterworth_hp", HP_ORDER, HP_CUTOFF_HZ, fs=rec.fs)
    y = dsp.filtfilt(hp, rec.samples)
    return np.abs(y - dsp.moving_average(y, TREND_WIN_MS, rec.fs))


def detection_signal(rec: Recording) -> np.ndarray:
    return dsp.moving_average(_rectified(rec), SMOOTH_WIN_MS, rec.fs)


def refine_peaks(peaks: np.ndarray, rectified: np.ndarray, half: int) -> np.ndarray:
    """Move each peak to the rectified maximum within ``half`` samples.

    The smoothing window flattens a short pulse into a plateau as wide as the
    window, so the smoothed maximum alone is only accurate to about ``half``.
    """
    if peaks.size == 0 or half < 1:
        return peaks
    offs = np.arange(-half, half + 1)
    idx = np.clip(peaks[:, None] + offs[None, :], 0, rectified.size - 1)
    return idx[np.arange(peaks.size), np.argmax(rectified[idx], axis=1)]


def min_peak_distance(fs: float, f_sti: float) -> int:
    """Smallest allowed peak spacing in samples (strictly above 1/f_sti - tau)."""
    limit = fs * (1.0 / f_sti - TAU_MS / 1000.0)
    return int(np.floor(limit)) + 1


def detect_peaks(rec: Recording, min_peak_ratio: float = MIN_PEAK_RATIO) -> np.ndarray:
    """Sample indices of stimulus-artifact peaks.

    Raises :class:`NoStimulationError` when nothing qualifies.
    """
    if len(rec) < 3:
        raise NoStimulationError("recording too short for peak detection")
    r = _rectified(rec)
    z = dsp.moving_average(r, SMOOTH_WIN_MS, rec.fs)
    thr = np.percentile(z, PEAK_PERCENTILE)
    floor = min_peak_ratio * np.median(z)
    height = max(thr, floor)
    if not height > 0:
        raise NoStimulationError("flat recording")
    peaks, _ = find_peaks(z, height=height, distance=min_peak_distance(rec.fs, rec.f_sti))
    if peaks.size == 0:
        raise NoStimulationError(f"no artifact peaks found in {rec.id}")
    half = dsp.window_length(SMOOTH_WIN_MS, rec.fs) // 2
    peaks = refine_peaks(peaks.astype(np.int64), r, half)
    # a refined pair can only collide when two pulses share one plateau
    return np.unique(peaks)


def identify_stim_periods(peak_times, fs: float, f_sti: float, pre: int, post: int,
                          n_samples: int | None = None,
                          gap_max_periods: float = GAP_MAX_PERIODS) -> StimPeriods:
    """Group peaks into stimulation periods split at gaps > ``gap_max_periods / f_sti``."""
    pk = np.asarray(peak_times, dtype=np.int64)
    if pk.size == 0:
        return StimPeriods()
    gap_max = gap_max_periods * fs / f_sti
    breaks = np.flatnonzero(np.diff(pk) > gap_max)
    firsts = np.concatenate([[0], breaks + 1])
    lasts = np.concatenate([breaks, [pk.size - 1]])
    start = pk[firsts] - pre
    end = pk[lasts] + post
    start = np.maximum(start, 0)
    if n_samples is not None:
        end = np.minimum(end, n_samples)
    return StimPeriods(np.column_stack([start, end]))


def _fit_trend(x: np.ndarray, degree: int, w: int) -> np.ndarray:
    """Polynomial trend whose smoothed version best fits the smoothed signal.

    Smoothing the basis columns with the same moving average as the data
    keeps polynomial trends exact (a centred mean shifts the lower-order
    coefficients) and makes detrending idempotent.
    """
    n = x.size
    if n == 0:
        return x.copy()
    if n < 2:
        return np.full(n, x.mean())
    if n <= degree:
        degree = 1
    sm = dsp.moving_average_n(x, w)
    V = L.legvander(np.linspace(-1.0, 1.0, n), degree)
    SV = np.column_stack([dsp.moving_average_n(V[:, k], w) for k in range(degree + 1)])
    c, *_ = np.linalg.lstsq(SV, sm, rcond=None)
    return V @ c


def dc_trend(x, fs: float, periods: StimPeriods, smooth_ms: float = DC_SMOOTH_MS,
             stim_degree: int = STIM_DEGREE, gap_degree: int = GAP_DEGREE) -> np.ndarray:
    """Piecewise trend: smoothed polynomial fit per stimulation period and per gap."""
    x = np.asarray(x, dtype=float)
    n = x.size
    w = dsp.window_length(smooth_ms, fs)
    trend = np.empty(n)
    cursor = 0
    for a, b in periods:
        a, b = max(a, 0), min(b, n)
        if a > cursor:
            trend[cursor:a] = _fit_trend(x[cursor:a], gap_degree, w)
        if b > a:
            trend[a:b] = _fit_trend(x[a:b], stim_degree, w)
        cursor = max(cursor, b)
    if cursor < n:
        trend[cursor:] = _fit_trend(x[cursor:], gap_degree, w)
    return trend


def remove_dc_transient(rec: Recording, periods: StimPeriods, **kw):
    """Subtract the piecewise trend; returns ``(detrended, trend)``."""
    trend = dc_trend(rec.samples, rec.fs, periods, **kw)
    return rec.with_samples(rec.samples - trend), trend


def segment(rec: Recording, peak_times) -> SegmentMatrix:
    """Slice ``[peak - pre, peak + post)`` around each peak.

    Peaks whose window leaves the signal are dropped; the count is kept in
    ``SegmentMatrix.dropped``.
    """
    pre, post = rec.pre_samples, rec.post_samples
    pk = np.asarray(peak_times, dtype=np.int64)
    keep = (pk - pre >= 0) & (pk + post <= len(rec))
    dropped = int(pk.size - keep.sum())
    if dropped:
        log.info("%s: dropped %d boundary peaks", rec.id, dropped)
    pk = pk[keep]
    idx = (pk - pre)[None, :] + np.arange(pre + post)[:, None]
    data = rec.samples[idx] if pk.size else np.zeros((pre + post, 0))
    return SegmentMatrix(data, pk, pre, post, dropped)


@dataclass(frozen=True)
class Preprocessed:
    """Everything the downstream stages need from one recording."""

    rec: Recording
    peaks: np.ndarray
    periods: StimPeriods
    filtered: np.ndarray
    detrended: np.ndarray
    trend: np.ndarray
    segments: SegmentMatrix


def preprocess(rec: Recording, notch: bool = True, detrend: bool = True,
               min_peak_ratio: float = MIN_PEAK_RATIO) -> Preprocessed:
    """Detect, notch, detrend and segment a recording.

    A recording without stimulation gets an empty segment matrix and only the
    non-stimulation (linear) detrend.
    """
    try:
        peaks = detect_peaks(rec, min_peak_ratio)
    except NoStimulationError:
        peaks = np.zeros(0, np.int64)
    periods = identify_stim_periods(peaks, rec.fs, rec.f_sti, rec.pre_samples,
                                    rec.post_samples, len(rec))
    x = rec.samples
    if notch and peaks.size:
        x = dsp.filtfilt(dsp.notch_harmonics(rec.fs), x)
    if detrend:
        trend = dc_trend(x, rec.fs, periods)
    else:
        trend = np.zeros_like(x)
    detrended = x - trend
    segs = segment(rec.with_samples(detrended), peaks)
    return Preprocessed(rec, segs.peak_times, periods, x, detrended, trend, segs)
