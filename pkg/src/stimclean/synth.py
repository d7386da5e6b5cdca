"""Synthetic LFP, stimulus-artifact tracks and semi-real recordings.

The artifact track follows ``f(t) = A(t) * sum_j s(t - t_j)``: a fixed pulse
shape ``s`` at the pulse times ``t_j`` scaled by a slowly varying gain, plus
an onset distortion over the first pulses of each period and exponential DC
transients at every on/off edge.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ann
from .core import (DEFAULT_F_STI, DEFAULT_FS, EventList, Recording, RecordingIOError,
                   StimPeriods, ValidationError, load_recording, save_events, save_recording,
                   write_columns)
from .library import ArtifactLibrary, build_entry
from .preprocess import preprocess
from .smarta import donor_pool, overlap_add

log = logging.getLogger(__name__)

#: pulse rate that reproduces the aliased spectral lines of the reference
#: hardware (42.8 and 86.36 Hz at 22 kHz); the nominal rate stays 130 Hz
DEFAULT_PULSE_HZ = 129.16


@dataclass(frozen=True)
class ArtifactModel:
    """Parameterized stimulus-artifact generator (amplitudes in microvolts)."""

    amplitude: float = 1000.0
    pulse_hz: float = DEFAULT_PULSE_HZ
    # biphasic pulse: positive then negative Gaussian phase
    peak_ms: float = 0.4
    width_ms: float = 0.12
    second_delay_ms: float = 0.35
    second_width_ms: float = 0.15
    second_ratio: float = 0.6
    # exponential recovery tail (double exponential, zero at the pulse start)
    tail_ratio: float = -0.15
    tail_ms: float = 1.5
    tail_rise_ms: float = 0.2
    support_ms: float = 7.0
    taper_ms: float = 1.0
    # slow gain modulation A(t) = amplitude * (1 + sum m_k sin(2 pi f_k t + phi_k))
    mod_depth: tuple = (0.2, 0.12)
    mod_hz: tuple = (0.13, 0.71)
    mod_phase: tuple = (0.0, 1.3)
    # additive onset distortion rho**j * d(tau) for the first n_on pulses
    onset_ratio: float = 0.5
    onset_decay: float = 0.85
    n_on: int = 30
    onset_ms: float = 2.0
    onset_rise_ms: float = 0.3
    # DC transients: dc_ratio * amplitude * exp(-t / dc_tau_ms), sign follows the step
    dc_ratio: float = 0.04
    dc_tau_ms: float = 50.0
    dc_off_ratio: float = 1.0
    dc_support_tau: float = 10.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValidationError("artifact amplitude must be non-negative")
        if sum(abs(m) for m in self.mod_depth) >= 1:
            raise ValidationError("gain modulation depth must keep A(t) > 0")
        if self.support_ms * self.pulse_hz >= 1000.0:
            raise ValidationError("pulse support must fit inside one inter-pulse interval")

    def scaled(self, amplitude: float) -> "ArtifactModel":
        return replace(self, amplitude=amplitude)

    # -- waveform pieces, tau in seconds ---------------------------------
    def shape(self, tau) -> np.ndarray:
        """Unit-gain base pulse ``s(tau)``; zero outside ``[0, support)``."""
        t = np.asarray(tau, dtype=float) * 1000.0
        g1 = np.exp(-0.5 * ((t - self.peak_ms) / self.width_ms) ** 2)
        g2 = np.exp(-0.5 * ((t - self.peak_ms - self.second_delay_ms)
                            / self.second_width_ms) ** 2)
        tail = np.exp(-np.maximum(t, 0) / self.tail_ms) \
            - np.exp(-np.maximum(t, 0) / self.tail_rise_ms)
        s = g1 - self.second_ratio * g2 + self.tail_ratio * tail
        return s * self._taper(t)

    def distortion(self, tau) -> np.ndarray:
        t = np.maximum(np.asarray(tau, dtype=float) * 1000.0, 0)
        d = np.exp(-t / self.onset_ms) - np.exp(-t / self.onset_rise_ms)
        return self.onset_ratio * d * self._taper(np.asarray(tau, dtype=float) * 1000.0)

    def _taper(self, t_ms: np.ndarray) -> np.ndarray:
        w = np.ones_like(t_ms)
        w[(t_ms < 0) | (t_ms >= self.support_ms)] = 0.0
        edge = (t_ms >= self.support_ms - self.taper_ms) & (t_ms < self.support_ms)
        w[edge] = np.cos(0.5 * np.pi * (t_ms[edge] - self.support_ms + self.taper_ms)
                         / self.taper_ms) ** 2
        return w

    def gain(self, t_s) -> np.ndarray:
        t = np.asarray(t_s, dtype=float)
        g = np.ones_like(t)
        for m, f, ph in zip(self.mod_depth, self.mod_hz, self.mod_phase):
            g = g + m * np.sin(2 * np.pi * f * t + ph)
        return self.amplitude * g

    def peak_gain(self) -> float:
        """Continuous-time maximum of the base pulse."""
        t = np.linspace(0, self.support_ms / 1000.0, 200001)
        return float(self.shape(t).max())


def pulse_times(start: int, end: float, fs: float, pulse_hz: float) -> np.ndarray:
    """Fractional sample positions of the pulses in ``[start, end)``."""
    step = fs / pulse_hz
    n = int(np.ceil((end - start) / step)) if end > start else 0
    t = start + step * np.arange(max(n, 0))
    return t[t < end]


def render_artifact(periods, model: ArtifactModel, fs: float, lo: int, hi: int,
                    open_end: bool = False) -> np.ndarray:
    """Artifact samples ``[lo, hi)`` for a schedule of ``(start, end)`` sample pairs.

    With ``open_end`` the last period has no end yet: its pulses continue
    through ``hi`` and no offset transient is rendered.
    """
    out = np.zeros(hi - lo)
    if model.amplitude == 0 or hi <= lo:
        return out
    support = int(np.ceil(model.support_ms * fs / 1000.0)) + 1
    dc_len = int(np.ceil(model.dc_support_tau * model.dc_tau_ms * fs / 1000.0))
    n_periods = len(periods)
    for k, (a, b) in enumerate(periods):
        is_open = open_end and k == n_periods - 1
        end = hi if is_open else b
        if a >= hi or (not is_open and b + max(support, dc_len) <= lo):
            continue
        tj = pulse_times(a, end, fs, model.pulse_hz)
        j = np.arange(tj.size)
        keep = (tj >= lo - support) & (tj < hi)
        tj, j = tj[keep], j[keep]
        if tj.size:
            first = np.ceil(tj).astype(np.int64)
            idx = first[:, None] + np.arange(support)[None, :]
            tau = (idx - tj[:, None]) / fs
            amp = model.gain(tj / fs)[:, None]
            wave = model.shape(tau)
            onset = j < model.n_on
            if np.any(onset) and model.onset_ratio:
                wave[onset] += (model.onset_decay ** j[onset])[:, None] * model.distortion(tau[onset])
            wave *= amp
            valid = (idx >= lo) & (idx < hi)
            np.add.at(out, idx[valid] - lo, wave[valid])
        # DC transients: rise at the onset, opposite sign at the offset
        dc_amp = model.dc_ratio * model.amplitude
        edges = [(a, dc_amp)]
        if not is_open:
            edges.append((b, -model.dc_off_ratio * dc_amp))
        for e, amp in edges:
            s0, s1 = max(e, lo), min(e + dc_len, hi)
            if s1 > s0 and amp:
                t = (np.arange(s0, s1) - e) / fs
                out[s0 - lo:s1 - lo] += amp * np.exp(-t * 1000.0 / model.dc_tau_ms)
    return out


def gen_artifact_track(schedule, model: ArtifactModel, fs: float, n_samples: int) -> np.ndarray:
    """Full-length artifact track for a known stimulation schedule."""
    periods = schedule.periods if isinstance(schedule, StimPeriods) else np.asarray(schedule)
    return render_artifact([tuple(map(int, p)) for p in periods], model, fs, 0, n_samples)


# ---------------------------------------------------------------------------
# LFP

@dataclass(frozen=True)
class LfpSpec:
    """Background and burst parameters (microvolts, Hz, seconds)."""

    alpha: float = 1.5
    knee_hz: float = 1.0
    background_rms: float = 8.0
    white_rms: float = 1.5
    beta_hz: float = 20.0
    beta_jitter_hz: float = 2.0
    beta_amp: float = 12.0
    burst_rate: float = 0.8
    burst_mean_s: float = 0.35
    burst_cv: float = 0.4
    burst_min_s: float = 0.1
    tones: tuple = ()   # ((freq_hz, amplitude_uv), ...)


def colored_noise(n: int, fs: float, alpha: float, knee_hz: float, rng) -> np.ndarray:
    """Unit-RMS noise with PSD proportional to ``(f^2 + knee^2)^(-alpha/2)``."""
    if n == 0:
        return np.zeros(0)
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / fs)
    spec *= (f ** 2 + knee_hz ** 2) ** (-alpha / 4.0)
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    rms = np.sqrt(np.mean(x ** 2))
    return x / rms if rms > 0 else x


def burst_intervals(duration_s: float, spec: LfpSpec, rng) -> np.ndarray:
    """Non-overlapping burst intervals (s) with gamma-distributed durations."""
    if spec.burst_rate <= 0 or spec.beta_amp == 0:
        return np.zeros((0, 2))
    shape = 1.0 / spec.burst_cv ** 2
    scale = spec.burst_mean_s / shape
    out = []
    t = rng.exponential(1.0 / spec.burst_rate)
    while True:
        dur = max(rng.gamma(shape, scale), spec.burst_min_s)
        if t + dur > duration_s:
            break
        out.append((t, t + dur))
        t = t + dur + rng.exponential(1.0 / spec.burst_rate)
    return np.array(out).reshape(-1, 2)


def gen_lfp(duration_s: float, fs: float = DEFAULT_FS, spec: LfpSpec | None = None,
            seed: int = 0, id: str = "lfp", f_sti: float = DEFAULT_F_STI):
    """Colored background plus Hann-enveloped beta bursts.

    Returns ``(recording, bursts)`` where ``bursts`` is the generating
    :class:`EventList`.
    """
    spec = spec or LfpSpec()
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * fs))
    x = spec.background_rms * colored_noise(n, fs, spec.alpha, spec.knee_hz, rng)
    x += spec.white_rms * rng.standard_normal(n)
    bursts = burst_intervals(n / fs, spec, rng)
    for on, off in bursts:
        a, b = int(round(on * fs)), int(round(off * fs))
        if b - a < 2:
            continue
        f0 = spec.beta_hz + spec.beta_jitter_hz * rng.uniform(-1, 1)
        t = np.arange(b - a) / fs
        env = np.hanning(b - a)
        x[a:b] += spec.beta_amp * env * np.sin(2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi))
    t_all = np.arange(n) / fs
    for f0, amp in spec.tones:
        x += amp * np.sin(2 * np.pi * f0 * t_all + rng.uniform(0, 2 * np.pi))
    rec = Recording(x, fs=fs, f_sti=f_sti, amplitude=0.0, id=id)
    return rec, EventList(bursts)


# ---------------------------------------------------------------------------
# semi-real construction

@dataclass
class SemiRealTruth:
    artifact: np.ndarray
    base_lfp: np.ndarray
    trend: np.ndarray
    schedule: StimPeriods
    flags: list = field(default_factory=list)


def make_semireal(adbs_rec: Recording, library: ArtifactLibrary, base_lfp: Recording,
                  K: int = 500, Q: int = 5, T: int = 50, leaf_capacity: int = 500,
                  seed: int = 0, id: str | None = None):
    """Artifact-only track from neighbour means, re-trended and added to ``base_lfp``.

    Each segment of ``adbs_rec`` is replaced by the mean of its ``K`` nearest
    raw library segments, which averages away the LFP they carry.
    Returns ``(semireal, truth)``.
    """
    if len(base_lfp) != len(adbs_rec) or base_lfp.fs != adbs_rec.fs:
        raise ValidationError("base LFP must match the aDBS recording in length and fs")
    pre = preprocess(adbs_rec)
    flags: list = []
    if pre.segments.n == 0:
        raise ValidationError(f"{adbs_rec.id}: no stimulus artifacts to transplant")
    try:
        target = library.get(adbs_rec.id)
    except KeyError:
        target = build_entry(adbs_rec, pre, min_segments=0)
    pool_entries, feats, _ = donor_pool(target, library, Q, flags)
    sel = feats.selected_idx
    pool_feat = np.ascontiguousarray(np.concatenate([e.W[sel].T for e in pool_entries]))
    pool_raw = np.ascontiguousarray(np.concatenate([e.X.T for e in pool_entries]))
    if pool_raw.shape[0] < K:
        msg = f"pool has {pool_raw.shape[0]} segments, fewer than K={K}; averaging all"
        warnings.warn(msg, stacklevel=2)
        flags.append(msg)
    forest = ann.build_forest(pool_feat, T=T, leaf_capacity=leaf_capacity, seed=seed)
    query = np.ascontiguousarray(target.W[sel].T)
    leaves = forest.route(query)
    means = np.empty((pre.segments.n, pre.segments.p))
    for i in range(pre.segments.n):
        cand = forest.candidates_from_leaves(leaves[:, i])
        if cand.size < min(K, pool_raw.shape[0]):
            cand = np.arange(pool_raw.shape[0])
        nn = ann.knn(pool_feat, cand, query[i], K)
        means[i] = pool_raw[nn].mean(axis=0)
    artifact = overlap_add(means, pre.segments.starts, len(adbs_rec))
    samples = artifact + pre.trend + base_lfp.samples
    schedule = StimPeriods.from_seconds(adbs_rec.stim_schedule, adbs_rec.fs) \
        if adbs_rec.stim_schedule is not None else pre.periods
    rec = Recording(samples, fs=adbs_rec.fs, f_sti=adbs_rec.f_sti,
                    amplitude=adbs_rec.amplitude, id=id or f"semireal-{adbs_rec.id}",
                    stim_schedule=adbs_rec.stim_schedule)
    return rec, SemiRealTruth(artifact, base_lfp.samples.copy(), pre.trend.copy(), schedule, flags)


# ---------------------------------------------------------------------------
# ground-truth directories

def save_truth(out_dir, semi: Recording, truth: SemiRealTruth, peaks=None, bursts=None) -> None:
    """Write the decomposition of a semi-real recording next to it.

    Layout: ``semireal.f32``, ``base_lfp.f32``, ``artifact.f32``, ``trend.f32``
    (each with a sidecar), ``schedule.csv``, ``peaks.csv`` and, when given,
    ``bursts.csv`` with the generating beta bursts.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_recording(semi, out / "semireal.f32")
    for name, x in (("base_lfp", truth.base_lfp), ("artifact", truth.artifact),
                    ("trend", truth.trend)):
        save_recording(semi.with_samples(x), out / f"{name}.f32")
    p = truth.schedule.periods
    write_columns(out / "schedule.csv", ["start_sample", "end_sample"], [p[:, 0], p[:, 1]])
    if peaks is not None:
        write_columns(out / "peaks.csv", ["peak_sample"], [np.asarray(peaks, np.int64)])
    if bursts is not None:
        save_events(bursts, out / "bursts.csv")


def _read_int_csv(path: Path, cols: int) -> np.ndarray:
    rows = path.read_text(encoding="utf-8").splitlines()[1:]
    vals = [[int(v) for v in r.split(",")] for r in rows if r.strip()]
    return np.array(vals, dtype=np.int64).reshape(-1, cols)


def load_truth(truth_dir):
    """Inverse of :func:`save_truth`: ``(semireal, truth, peaks)``.

    ``peaks`` is ``None`` when the directory has no ``peaks.csv``.
    """
    d = Path(truth_dir)
    if not d.is_dir():
        raise RecordingIOError(f"no truth directory at {d}")
    semi = load_recording(d / "semireal.f32")
    parts = {k: load_recording(d / f"{k}.f32").samples for k in ("base_lfp", "artifact", "trend")}
    try:
        sched = StimPeriods(_read_int_csv(d / "schedule.csv", 2))
    except OSError as exc:
        raise RecordingIOError(f"cannot read schedule in {d}: {exc}") from exc
    peaks = _read_int_csv(d / "peaks.csv", 1)[:, 0] if (d / "peaks.csv").exists() else None
    truth = SemiRealTruth(parts["artifact"], parts["base_lfp"], parts["trend"], sched)
    return semi, truth, peaks
