"""Cross-recording stimulus-artifact library.

Each :class:`RecordingEntry` holds the shrinkage-denoised artifact segments of
one recording, their Haar coefficients and two summaries used to pick donor
recordings for a target: the mean peak amplitude ``a_m`` and the median
wavelet vector ``s_m``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dsp
from .core import Recording, RecordingIOError, ValidationError
from .preprocess import Preprocessed, preprocess
from .shrink import shrink_grouped

log = logging.getLogger(__name__)

MIN_SEGMENTS = 50
VARIANCE_FRACTION = 0.99
AMPLITUDE_TOLERANCE = 0.10


class EntryRejected(ValidationError):
    pass


@dataclass(frozen=True)
class RecordingEntry:
    id: str
    a_m: float
    s_m: np.ndarray
    W: np.ndarray            # q x n  Haar coefficients of denoised segments
    D: np.ndarray            # p x n  denoised segments
    X: np.ndarray            # p x n  raw (detrended) segments
    peak_times: np.ndarray
    onset_offsets: np.ndarray  # ms since the onset of the containing period
    fs: float
    f_sti: float

    @property
    def n(self) -> int:
        return self.D.shape[1]

    @property
    def p(self) -> int:
        return self.D.shape[0]

    @property
    def q(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True)
class FeatureSelection:
    selected_idx: np.ndarray
    variance: np.ndarray

    @property
    def k_feat(self) -> int:
        return int(self.selected_idx.size)


@dataclass(frozen=True)
class ArtifactLibrary:
    entries: tuple = ()
    features: Optional[FeatureSelection] = None

    def __post_init__(self):
        ents = tuple(self.entries)
        if len({e.q for e in ents}) > 1:
            raise ValidationError("library entries disagree on wavelet length q")
        if len({(e.fs, e.f_sti) for e in ents}) > 1:
            raise ValidationError("library entries must share fs and f_sti")
        object.__setattr__(self, "entries", ents)

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def get(self, entry_id: str) -> RecordingEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise KeyError(entry_id)

    def with_entry(self, entry: RecordingEntry) -> "ArtifactLibrary":
        """New library with ``entry`` added (replacing one with the same id)."""
        ents = [e for e in self.entries if e.id != entry.id] + [entry]
        feats = select_features(ents) if len(ents) >= 2 else None
        return ArtifactLibrary(tuple(ents), feats)

    def without(self, entry_id: str) -> "ArtifactLibrary":
        ents = [e for e in self.entries if e.id != entry_id]
        feats = select_features(ents) if len(ents) >= 2 else None
        return ArtifactLibrary(tuple(ents), feats)


def onset_offsets_ms(peaks: np.ndarray, periods, fs: float) -> np.ndarray:
    out = np.full(peaks.size, np.nan)
    for a, b in periods:
        sel = (peaks >= a) & (peaks < b)
        out[sel] = (peaks[sel] - a) * 1000.0 / fs
    return out


def build_entry(rec: Recording, pre: Preprocessed | None = None, group: int = 500,
                k: int = 10, min_segments: int = MIN_SEGMENTS) -> RecordingEntry:
    """Denoise, transform and summarize the artifacts of one recording."""
    pre = pre if pre is not None else preprocess(rec)
    segs = pre.segments
    if segs.n < min_segments:
        raise EntryRejected(f"{rec.id}: {segs.n} segments, need at least {min_segments}")
    X = segs.data
    D = shrink_grouped(X, group=group, k=k)
    W = dsp.haar_forward(D)
    return RecordingEntry(
        id=rec.id,
        a_m=float(X.max(axis=0).mean()),
        s_m=np.median(W, axis=1),
        W=W, D=D, X=np.array(X),
        peak_times=np.array(segs.peak_times),
        onset_offsets=onset_offsets_ms(segs.peak_times, pre.periods, rec.fs),
        fs=rec.fs, f_sti=rec.f_sti,
    )


def select_features(entries: Sequence[RecordingEntry] | Sequence[np.ndarray],
                    fraction: float = VARIANCE_FRACTION) -> FeatureSelection:
    """Wavelet indices carrying just under ``fraction`` of the across-recording variance.

    Accepts entries or bare ``s_m`` vectors.
    """
    vecs = [e.s_m if isinstance(e, RecordingEntry) else np.asarray(e, float) for e in entries]
    if len(vecs) < 2:
        raise ValidationError("feature selection needs at least two recordings")
    S = np.column_stack(vecs)
    sv = S.var(axis=1)
    order = np.argsort(-sv, kind="stable")
    cum = np.cumsum(sv[order])
    k = int(np.sum(cum < fraction * cum[-1]))
    if cum[-1] == 0:
        warnings.warn("all median artifacts identical; selecting a single feature",
                      stacklevel=2)
    k = max(k, 1)
    return FeatureSelection(order[:k].astype(np.int64), sv)


def select_recordings(lib: ArtifactLibrary, target: RecordingEntry, Q: int = 5,
                      features: FeatureSelection | None = None,
                      tolerance: float = AMPLITUDE_TOLERANCE) -> list[str]:
    """Ids of up to ``Q`` amplitude-compatible recordings closest to the target."""
    feats = features or lib.features
    idx = feats.selected_idx if feats is not None else slice(None)
    cands = [e for e in lib.entries
             if e.id != target.id and abs(e.a_m - target.a_m) <= tolerance * abs(target.a_m)]
    if not cands:
        log.info("%s: no amplitude-compatible donors", target.id)
        return []
    dist = [np.linalg.norm(e.s_m[idx] - target.s_m[idx]) for e in cands]
    order = sorted(range(len(cands)), key=lambda i: (dist[i], i))
    return [cands[i].id for i in order[:Q]]


def build_library(recs: Sequence[Recording], preprocessed: Sequence[Preprocessed] | None = None,
                  **kw) -> ArtifactLibrary:
    entries = []
    for i, rec in enumerate(recs):
        pre = preprocessed[i] if preprocessed is not None else None
        try:
            entries.append(build_entry(rec, pre, **kw))
        except EntryRejected as exc:
            log.warning("skipping entry: %s", exc)
    feats = select_features(entries) if len(entries) >= 2 else None
    return ArtifactLibrary(tuple(entries), feats)


# ---------------------------------------------------------------------------
# persistence: one directory per entry, float32 matrices + text manifests

def _write_matrix(path: Path, a: np.ndarray) -> None:
    path.write_bytes(np.ascontiguousarray(a, dtype="<f4").tobytes())


def _read_matrix(path: Path, shape) -> np.ndarray:
    return np.frombuffer(path.read_bytes(), dtype="<f4").reshape(shape).astype(float)


def _safe_name(entry_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in entry_id)


def save_library(lib: ArtifactLibrary, out_dir) -> None:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        lines = [f"n_entries = {len(lib)}"]
        if lib.entries:
            e0 = lib.entries[0]
            lines += [f"p = {e0.p}", f"q = {e0.q}", f"fs = {e0.fs!r}", f"f_sti = {e0.f_sti!r}"]
        if lib.features is not None:
            lines.append("selected_idx = " + ",".join(map(str, lib.features.selected_idx)))
        for e in lib.entries:
            d = out / _safe_name(e.id)
            d.mkdir(exist_ok=True)
            _write_matrix(d / "D.f32", e.D)
            _write_matrix(d / "W.f32", e.W)
            _write_matrix(d / "X.f32", e.X)
            (d / "peaks.i64").write_bytes(e.peak_times.astype("<i8").tobytes())
            (d / "onset_ms.f64").write_bytes(e.onset_offsets.astype("<f8").tobytes())
            (d / "manifest.txt").write_text(
                f"id = {e.id}\nn = {e.n}\np = {e.p}\nq = {e.q}\n"
                f"a_m = {e.a_m!r}\nfs = {e.fs!r}\nf_sti = {e.f_sti!r}\n", encoding="utf-8")
            lines.append(f"entry = {d.name}")
        (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise RecordingIOError(f"cannot write library to {out}: {exc}") from exc


def _kv(path: Path) -> list[tuple[str, str]]:
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            out.append((k.strip(), v.strip()))
    return out


def load_library(lib_dir) -> ArtifactLibrary:
    root = Path(lib_dir)
    if not (root / "manifest.txt").exists():
        raise RecordingIOError(f"{root} has no library manifest")
    entries = []
    for key, val in _kv(root / "manifest.txt"):
        if key != "entry":
            continue
        d = root / val
        m = dict(_kv(d / "manifest.txt"))
        n, p, q = int(m["n"]), int(m["p"]), int(m["q"])
        D = _read_matrix(d / "D.f32", (p, n))
        W = _read_matrix(d / "W.f32", (q, n))
        entries.append(RecordingEntry(
            id=m["id"], a_m=float(m["a_m"]), s_m=np.median(W, axis=1), W=W, D=D,
            X=_read_matrix(d / "X.f32", (p, n)),
            peak_times=np.frombuffer((d / "peaks.i64").read_bytes(), "<i8").astype(np.int64),
            onset_offsets=np.frombuffer((d / "onset_ms.f64").read_bytes(), "<f8").copy(),
            fs=float(m["fs"]), f_sti=float(m["f_sti"])))
    feats = select_features(entries) if len(entries) >= 2 else None
    return ArtifactLibrary(tuple(entries), feats)
