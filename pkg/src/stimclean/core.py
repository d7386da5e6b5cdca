"""Shared domain types and file I/O.

Time is carried as integer sample indices inside the library; seconds appear
only in file formats (sidecar schedule, event CSVs).

File layout for a recording stored at ``path``:

* ``path``        raw little-endian float32 samples, no header
* ``path.meta``   UTF-8 ``key = value`` lines: fs, f_sti, amplitude, id,
                  n_samples and optionally stim_schedule (``on:off;on:off`` s)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

DEFAULT_FS = 22000.0
DEFAULT_F_STI = 130.0

# segment bounds relative to a detected artifact peak
PRE_MS = 1.0
TAU_MS = 0.5

SIDECAR_SUFFIX = ".meta"


class StimcleanError(Exception):
    """Base class for library errors."""

    exit_code = 1


class ValidationError(StimcleanError, ValueError):
    exit_code = 2


class NumericError(StimcleanError, ArithmeticError):
    exit_code = 3


class RecordingIOError(StimcleanError, OSError):
    exit_code = 4


def _readonly(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Recording:
    """A single-channel LFP recording in microvolts."""

    samples: np.ndarray
    fs: float = DEFAULT_FS
    f_sti: float = DEFAULT_F_STI
    amplitude: float = 1.0
    id: str = "rec"
    stim_schedule: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        x = _readonly(self.samples)
        if x.ndim != 1:
            raise ValidationError("samples must be one-dimensional")
        if not np.all(np.isfinite(x)):
            raise ValidationError("samples contain NaN or Inf")
        if not self.fs > 2 * self.f_sti:
            raise ValidationError(f"fs={self.fs} must exceed 2*f_sti={2 * self.f_sti}")
        object.__setattr__(self, "samples", x)
        if self.stim_schedule is not None:
            sched = tuple((float(a), float(b)) for a, b in self.stim_schedule)
            object.__setattr__(self, "stim_schedule", sched)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs

    def with_samples(self, samples, **changes) -> "Recording":
        kw = dict(fs=self.fs, f_sti=self.f_sti, amplitude=self.amplitude,
                  id=self.id, stim_schedule=self.stim_schedule)
        kw.update(changes)
        return Recording(samples, **kw)

    # segment geometry -------------------------------------------------
    @property
    def pre_samples(self) -> int:
        return int(np.floor(self.fs * PRE_MS / 1000.0 + 0.5))

    @property
    def post_samples(self) -> int:
        post_ms = 1000.0 / self.f_sti - TAU_MS
        return int(np.floor(self.fs * post_ms / 1000.0 + 0.5))

    @property
    def segment_length(self) -> int:
        return self.pre_samples + self.post_samples


@dataclass(frozen=True)
class SegmentMatrix:
    """Column-per-artifact matrix with the peak sample of each column.

    ``data[:, i]`` covers samples ``[peak_times[i] - pre, peak_times[i] + post)``.
    """

    data: np.ndarray
    peak_times: np.ndarray
    pre: int
    post: int
    dropped: int = 0

    def __post_init__(self):
        d = _readonly(self.data)
        pk = _readonly(self.peak_times, np.int64)
        if d.ndim != 2 or d.shape[0] != self.pre + self.post:
            raise ValidationError("data must be p x n with p = pre + post")
        if d.shape[1] != pk.size:
            raise ValidationError("one peak time per column required")
        if pk.size > 1 and np.any(np.diff(pk) <= 0):
            raise ValidationError("peak_times must be strictly increasing")
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "peak_times", pk)

    @property
    def p(self) -> int:
        return self.pre + self.post

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @property
    def starts(self) -> np.ndarray:
        return self.peak_times - self.pre


@dataclass(frozen=True)
class StimPeriods:
    """Sorted, non-overlapping half-open ``[start, end)`` sample intervals."""

    periods: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))

    def __post_init__(self):
        p = np.asarray(self.periods, dtype=np.int64).reshape(-1, 2)
        if p.size:
            if np.any(p[:, 1] <= p[:, 0]):
                raise ValidationError("period end must exceed start")
            if np.any(p[1:, 0] < p[:-1, 1]):
                raise ValidationError("periods must be sorted and non-overlapping")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "periods", p)

    def __len__(self) -> int:
        return self.periods.shape[0]

    def __iter__(self):
        return iter(map(tuple, self.periods.tolist()))

    @property
    def onsets(self) -> np.ndarray:
        return self.periods[:, 0]

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        for a, b in self:
            m[max(a, 0):min(b, n)] = True
        return m

    @classmethod
    def from_seconds(cls, schedule: Sequence[tuple[float, float]], fs: float) -> "StimPeriods":
        rows = [(int(round(a * fs)), int(round(b * fs))) for a, b in schedule]
        return cls(np.array(rows, dtype=np.int64).reshape(-1, 2))

    def to_seconds(self, fs: float) -> tuple[tuple[float, float], ...]:
        return tuple((a / fs, b / fs) for a, b in self)


@dataclass(frozen=True)
class EventList:
    """Sorted, disjoint ``[onset, offset)`` intervals in seconds."""

    events: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        e = np.asarray(self.events, dtype=np.float64).reshape(-1, 2)
        if e.size:
            if np.any(e[:, 1] <= e[:, 0]):
                raise ValidationError("event offset must exceed onset")
            if np.any(e[1:, 0] < e[:-1, 1]):
                raise ValidationError("events must be sorted and non-overlapping")
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "events", e)

    def __len__(self) -> int:
        return self.events.shape[0]

    def __iter__(self):
        return iter(map(tuple, self.events.tolist()))

    @property
    def durations(self) -> np.ndarray:
        return self.events[:, 1] - self.events[:, 0]

    @classmethod
    def from_samples(cls, intervals, fs: float) -> "EventList":
        iv = np.asarray(intervals, dtype=np.float64).reshape(-1, 2)
        return cls(iv / fs)


# ---------------------------------------------------------------------------
# I/O

def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + SIDECAR_SUFFIX)


def _format_schedule(schedule) -> str:
    return ";".join(f"{a!r}:{b!r}" for a, b in schedule)


def _parse_schedule(text: str):
    text = text.strip()
    if not text:
        return ()
    out = []
    for item in text.split(";"):
        a, b = item.split(":")
        out.append((float(a), float(b)))
    return tuple(out)


def save_recording(rec: Recording, path) -> None:
    """Write samples as float32 LE plus a key/value sidecar."""
    path = Path(path)
    payload = np.ascontiguousarray(rec.samples, dtype="<f4")
    lines = [
        f"fs = {rec.fs!r}",
        f"f_sti = {rec.f_sti!r}",
        f"amplitude = {rec.amplitude!r}",
        f"id = {rec.id}",
        f"n_samples = {payload.size}",
    ]
    if rec.stim_schedule is not None:
        lines.append(f"stim_schedule = {_format_schedule(rec.stim_schedule)}")
    try:
        path.write_bytes(payload.tobytes())
        sidecar_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise RecordingIOError(f"cannot write recording to {path}: {exc}") from exc


def read_sidecar(path) -> dict:
    meta_path = sidecar_path(path)
    if not meta_path.exists():
        raise RecordingIOError(f"missing sidecar {meta_path}")
    meta = {}
    for line in meta_path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    return meta


def load_recording(path) -> Recording:
    path = Path(path)
    meta = read_sidecar(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise RecordingIOError(f"cannot read {path}: {exc}") from exc
    if len(raw) % 4:
        raise ValidationError(f"{path}: payload is not a whole number of float32 samples")
    samples = np.frombuffer(raw, dtype="<f4")
    declared = int(meta.get("n_samples", samples.size))
    if declared != samples.size:
        raise ValidationError(
            f"{path}: sidecar declares {declared} samples, file holds {samples.size}")
    if not np.all(np.isfinite(samples)):
        raise ValidationError(f"{path}: non-finite samples")
    schedule = None
    if "stim_schedule" in meta:
        schedule = _parse_schedule(meta["stim_schedule"])
    return Recording(
        samples.astype(np.float64),
        fs=float(meta.get("fs", DEFAULT_FS)),
        f_sti=float(meta.get("f_sti", DEFAULT_F_STI)),
        amplitude=float(meta.get("amplitude", 1.0)),
        id=meta.get("id", path.stem),
        stim_schedule=schedule,
    )


def save_events(events: EventList, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["onset_s", "offset_s"])
        for a, b in events:
            w.writerow([repr(a), repr(b)])


def load_events(path) -> EventList:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return EventList([(float(r["onset_s"]), float(r["offset_s"])) for r in rows])


def write_columns(path, header: Sequence[str], columns: Sequence[Sequence]) -> None:
    """Small CSV helper for integer/float column dumps (peaks, periods, traces)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for row in zip(*columns):
            w.writerow(list(row))
