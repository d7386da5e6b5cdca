"""Beta-amplitude extraction, threshold events and a closed-loop stimulation
simulator.

Offline labelling uses zero-phase filters and a centred moving mean. The
simulated controller uses the same filters run causally and a trailing mean,
so it carries their group delay, and the artifacts it switches on are fed
back into the signal it senses.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import sosfilt

from . import dsp
from .core import EventList, Recording, StimPeriods, ValidationError
from .synth import ArtifactModel, render_artifact

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BetaConfig:
    bp_band: tuple = (3.0, 37.0)
    bp_order: int = 2
    beta_search: tuple = (13.0, 35.0)
    peak_Q: float = 3.0
    peak_passes: int = 3
    ma_ms: float = 400.0
    threshold_percentile: float = 75.0
    min_on_ms: float = 400.0
    default_peak_hz: float = 24.0
    # a spectral maximum counts as a peak only this far above the band median
    peak_prominence: float = 2.0
    baseline_fraction: float = 0.2

    def __post_init__(self):
        lo, hi = self.bp_band
        slo, shi = self.beta_search
        if not (0 < lo < slo < shi < hi):
            raise ValidationError("beta_search must lie inside bp_band")
        if min(self.peak_Q, self.peak_passes, self.ma_ms, self.min_on_ms) <= 0:
            raise ValidationError("filter and timing parameters must be positive")


def _bandpass(fs, cfg):
    return dsp.design_filter("butterworth_bp", cfg.bp_order, cfg.bp_band, fs=fs)


def _peak_chain(fs, cfg, peak_hz):
    one = dsp.design_filter("peak", 2, peak_hz, Q=cfg.peak_Q, fs=fs)
    chain = one
    for _ in range(cfg.peak_passes - 1):
        chain = chain + one
    return chain


def find_beta_peak(x, fs: float, cfg: BetaConfig = BetaConfig()) -> float:
    """Frequency of the Welch-PSD maximum inside ``cfg.beta_search``.

    Falls back to ``cfg.default_peak_hz`` with a warning when the band has no
    maximum standing ``peak_prominence`` above its median.
    """
    x = np.asarray(x, dtype=float)
    win = min(1.0, x.size / fs)
    f, P = dsp.welch_psd(x, fs, win_s=win)
    band = (f >= cfg.beta_search[0]) & (f <= cfg.beta_search[1])
    Pb = P[band]
    if Pb.size == 0 or not np.max(Pb) > cfg.peak_prominence * np.median(Pb):
        warnings.warn(f"no beta peak; using {cfg.default_peak_hz} Hz", stacklevel=2)
        return float(cfg.default_peak_hz)
    return float(f[band][np.argmax(Pb)])


def beta_amplitude(x, fs: float, cfg: BetaConfig = BetaConfig(), peak_hz: float | None = None,
                   causal: bool = False):
    """Smoothed rectified beta activity. Returns ``(amplitude, peak_hz)``."""
    x = np.asarray(x, dtype=float)
    if peak_hz is None:
        peak_hz = find_beta_peak(x, fs, cfg)
    if causal:
        tracker = CausalBetaTracker(fs, cfg, peak_hz)
        return tracker.process(x), peak_hz
    y = dsp.filtfilt(_bandpass(fs, cfg), x)
    one = dsp.design_filter("peak", 2, peak_hz, Q=cfg.peak_Q, fs=fs)
    for _ in range(cfg.peak_passes):
        y = dsp.filtfilt(one, y)
    return dsp.moving_average(np.abs(y), cfg.ma_ms, fs), peak_hz


class CausalBetaTracker:
    """Streaming causal beta amplitude; chunked and one-shot runs agree bit for bit."""

    def __init__(self, fs: float, cfg: BetaConfig, peak_hz: float):
        self.fs = fs
        self.cfg = cfg
        self.peak_hz = peak_hz
        chain = _bandpass(fs, cfg) + _peak_chain(fs, cfg, peak_hz)
        self.sos = chain.sos
        self.N = max(1, int(round(cfg.ma_ms * fs / 1000.0)))
        self.reset()

    def reset(self):
        self.zi = np.zeros((self.sos.shape[0], 2))
        self.n_done = 0
        self.csum = np.zeros(1)  # cumulative sums C[max(0, n_done - N) .. n_done]

    def snapshot(self):
        return (self.zi.copy(), self.n_done, self.csum.copy())

    def restore(self, snap):
        self.zi, self.n_done, self.csum = snap[0].copy(), snap[1], snap[2].copy()

    def process(self, chunk) -> np.ndarray:
        chunk = np.asarray(chunk, dtype=float)
        m = chunk.size
        if m == 0:
            return np.zeros(0)
        y, self.zi = sosfilt(self.sos, chunk, zi=self.zi)
        c = np.cumsum(np.concatenate([self.csum[-1:], np.abs(y)]))
        allC = np.concatenate([self.csum, c[1:]])
        base = max(0, self.n_done - self.N)
        hi = self.n_done + 1 + np.arange(m)
        lo = np.maximum(hi - self.N, 0)
        out = (allC[hi - base] - allC[lo - base]) / (hi - lo)
        self.n_done += m
        self.csum = allC[max(0, self.n_done - self.N) - base:]
        return out


# ---------------------------------------------------------------------------
# events

def event_samples(amplitude, threshold: float, min_on: int) -> np.ndarray:
    """Two-state automaton: open on ``amp > thr``; after ``min_on`` samples
    close at the first ``amp < thr``. Returns ``(k, 2)`` half-open sample pairs."""
    a = np.asarray(amplitude, dtype=float)
    n = a.size
    above = a > threshold
    below = a < threshold
    out = []
    pos = 0
    while pos < n:
        k = pos + int(np.argmax(above[pos:]))
        if not above[k]:
            break
        j0 = k + min_on
        if j0 >= n:
            out.append((k, n))
            break
        j = j0 + int(np.argmax(below[j0:]))
        if not below[j]:
            out.append((k, n))
            break
        out.append((k, j))
        pos = j
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def detect_beta_events(amplitude, threshold: float, fs: float, min_on_ms: float = 400.0,
                       mask=None) -> EventList:
    """Threshold events in seconds; samples under ``mask`` never count as above."""
    if not threshold > 0:
        raise ValidationError("threshold must be positive")
    a = np.asarray(amplitude, dtype=float)
    if mask is not None:
        a = np.where(mask, 0.0, a)
    ev = event_samples(a, threshold, int(round(min_on_ms * fs / 1000.0)))
    return EventList.from_samples(ev, fs)


def calibrate_threshold(amplitude, cfg: BetaConfig = BetaConfig(), n_baseline: int | None = None):
    a = np.asarray(amplitude, dtype=float)
    n = n_baseline if n_baseline is not None else max(1, int(cfg.baseline_fraction * a.size))
    return float(np.percentile(a[:n], cfg.threshold_percentile))


def schedule_from_events(ev: np.ndarray, n: int) -> StimPeriods:
    """Stimulation follows a decision by one sample."""
    shifted = np.minimum(np.asarray(ev, dtype=np.int64).reshape(-1, 2) + 1, n)
    return StimPeriods(shifted[shifted[:, 1] > shifted[:, 0]])


# ---------------------------------------------------------------------------
# closed loop

@dataclass
class AdbsResult:
    recording: Recording
    schedule: StimPeriods
    threshold: float
    peak_hz: float
    amplitude: np.ndarray
    clean_schedule: StimPeriods
    clean_amplitude: np.ndarray

    def on_fraction(self) -> float:
        return float(self.schedule.mask(len(self.recording)).mean())

    def clean_on_fraction(self) -> float:
        return float(self.clean_schedule.mask(len(self.recording)).mean())


def simulate_adbs(base_lfp: Recording, model: ArtifactModel, cfg: BetaConfig = BetaConfig(),
                  chunk_ms: float = 50.0, threshold: float | None = None,
                  peak_hz: float | None = None, id: str | None = None) -> AdbsResult:
    """Run the threshold controller causally with artifact feedback.

    The threshold and beta peak are calibrated on the first
    ``cfg.baseline_fraction`` of ``base_lfp`` unless given. Stimulation starts
    one sample after an upward crossing and stops one sample after the closing
    decision, so every sample the controller has already seen stays valid.
    """
    fs = base_lfp.fs
    x = base_lfp.samples
    n = x.size
    n_base = max(1, int(cfg.baseline_fraction * n))
    if peak_hz is None:
        peak_hz = find_beta_peak(x[:n_base], fs, cfg)
    clean_amp = CausalBetaTracker(fs, cfg, peak_hz).process(x)
    if threshold is None:
        threshold = calibrate_threshold(clean_amp, cfg, n_base)
    if not threshold > 0:
        raise ValidationError("calibrated threshold is not positive")
    min_on = int(round(cfg.min_on_ms * fs / 1000.0))
    clean_sched = schedule_from_events(event_samples(clean_amp, threshold, min_on), n)

    tracker = CausalBetaTracker(fs, cfg, peak_hz)
    chunk = max(1, int(round(chunk_ms * fs / 1000.0)))
    amp = np.empty(n)
    sensed = np.empty(n)
    periods: list = []
    on = False
    decided = 0  # sample of the last opening decision
    pos = 0
    while pos < n:
        hi = min(pos + chunk, n)
        art = render_artifact(periods, model, fs, pos, hi, open_end=on)
        s = x[pos:hi] + art
        snap = tracker.snapshot()
        a = tracker.process(s)
        if on:
            start = max(decided + min_on - pos, 0)
            hits = np.flatnonzero(a[start:] < threshold)
            k = start + int(hits[0]) if hits.size else -1
        else:
            hits = np.flatnonzero(a > threshold)
            k = int(hits[0]) if hits.size else -1
        if k < 0:
            amp[pos:hi], sensed[pos:hi] = a, s
            pos = hi
            continue
        tracker.restore(snap)
        amp[pos:pos + k + 1] = tracker.process(s[:k + 1])
        sensed[pos:pos + k + 1] = s[:k + 1]
        g = pos + k
        if on:
            periods[-1] = (periods[-1][0], min(g + 1, n))
            on = False
        else:
            decided = g
            if g + 1 < n:
                periods.append((g + 1, n))
                on = True
        pos = g + 1
    periods = [(a_, b_) for a_, b_ in periods if b_ > a_]
    schedule = StimPeriods(np.array(periods, dtype=np.int64).reshape(-1, 2))
    rec = Recording(sensed, fs=fs, f_sti=base_lfp.f_sti, amplitude=model.amplitude,
                    id=id or f"adbs-{base_lfp.id}", stim_schedule=schedule.to_seconds(fs))
    return AdbsResult(rec, schedule, float(threshold), float(peak_hz), amp, clean_sched, clean_amp)
