"""DSP primitives: biquad filter design and application, moving averages,
Welch PSD, orthonormal Haar transform and normalized polynomial fitting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from numpy.polynomial import legendre as L
from scipy import signal

from .core import ValidationError

FILTER_KINDS = ("butterworth_hp", "butterworth_lp", "butterworth_bp", "notch", "peak")


@dataclass(frozen=True)
class BiquadChain:
    """Cascade of second-order sections plus the parameters that produced it."""

    sos: np.ndarray
    kind: str
    order: int
    freqs: tuple
    Q: float | None
    fs: float
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_sections(self) -> int:
        return self.sos.shape[0]

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(s[3:]) for s in self.sos])

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def response(self, freqs_hz) -> np.ndarray:
        """Complex single-pass frequency response at ``freqs_hz``."""
        _, h = signal.sosfreqz(self.sos, worN=np.atleast_1d(freqs_hz), fs=self.fs)
        return h

    def gain_db(self, freqs_hz, zero_phase: bool = False) -> np.ndarray:
        mag = np.abs(self.response(freqs_hz))
        if zero_phase:
            mag = mag ** 2
        with np.errstate(divide="ignore"):
            return 20 * np.log10(mag)

    def __add__(self, other: "BiquadChain") -> "BiquadChain":
        if other.fs != self.fs:
            raise ValidationError("cannot chain filters at different sampling rates")
        return BiquadChain(np.vstack([self.sos, other.sos]), "chain",
                           self.order + other.order, self.freqs + other.freqs,
                           None, self.fs)


def design_filter(kind: str, order: int, freqs: Union[float, Sequence[float]],
                  Q: float | None = None, fs: float = 22000.0) -> BiquadChain:
    """Bilinear-transform IIR design.

    ``butterworth_*`` use ``order`` as the analog prototype order (so a band-pass
    has ``2 * order`` poles). ``notch`` and ``peak`` are second-order resonators
    and ignore ``order``; passing several centre frequencies to ``notch`` builds
    one cascade (used for line-noise harmonics).
    """
    if kind not in FILTER_KINDS:
        raise ValidationError(f"unknown filter kind {kind!r}")
    f = np.atleast_1d(np.asarray(freqs, dtype=float))
    nyq = fs / 2.0
    if np.any(f <= 0) or np.any(f >= nyq):
        raise ValidationError(f"filter frequencies {f.tolist()} outside (0, {nyq})")

    if kind == "butterworth_bp":
        if f.size != 2 or f[0] >= f[1]:
            raise ValidationError("band-pass needs (low, high) with low < high")
        sos = signal.butter(order, f, btype="bandpass", fs=fs, output="sos")
    elif kind in ("butterworth_hp", "butterworth_lp"):
        btype = "highpass" if kind.endswith("hp") else "lowpass"
        sos = signal.butter(order, f[0], btype=btype, fs=fs, output="sos")
    else:
        if Q is None or Q <= 0:
            raise ValidationError(f"{kind} filter needs Q > 0")
        design = signal.iirnotch if kind == "notch" else signal.iirpeak
        sections = [signal.tf2sos(*design(f0, Q, fs=fs)) for f0 in f]
        sos = np.vstack(sections)
        order = 2 * f.size

    chain = BiquadChain(np.asarray(sos, dtype=float), kind, int(order),
                        tuple(f.tolist()), Q, float(fs))
    if not chain.is_stable():
        raise ValidationError(f"unstable {kind} design for {f.tolist()} Hz at fs={fs}")
    return chain


def notch_harmonics(fs: float, base: float = 60.0, fmax: float = 3000.0,
                    Q: float = 200.0) -> BiquadChain:
    """Line-noise notch cascade at ``base, 2*base, ...`` up to ``fmax``."""
    top = min(fmax, fs / 2 - 1.0)
    harmonics = np.arange(base, top + 1e-9, base)
    return design_filter("notch", 2, harmonics, Q=Q, fs=fs)


def _check_finite(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValidationError("input contains NaN or Inf")
    return x


def filtfilt(chain: BiquadChain, x) -> np.ndarray:
    """Zero-phase forward-backward filtering with odd-reflection padding.

    The forward-backward and backward-forward passes differ only in their
    edge transients; averaging them makes the result commute exactly with
    time reversal.
    """
    x = _check_finite(x)
    if x.size == 0:
        return x.copy()
    padlen = min(3 * chain.order, x.size - 1)
    fb = signal.sosfiltfilt(chain.sos, x, padtype="odd", padlen=padlen)
    bf = signal.sosfiltfilt(chain.sos, x[::-1], padtype="odd", padlen=padlen)[::-1]
    return 0.5 * (fb + bf)


def filter_causal(chain: BiquadChain, x, zi=None):
    """Single forward pass. Returns ``y`` or ``(y, zf)`` when ``zi`` is given."""
    x = _check_finite(x)
    if zi is None:
        return signal.sosfilt(chain.sos, x)
    return signal.sosfilt(chain.sos, x, zi=zi)


def window_length(win_ms: float, fs: float) -> int:
    """Odd moving-average length for a window given in milliseconds."""
    if win_ms <= 0:
        raise ValidationError("window length must be positive")
    w = max(1, int(np.floor(fs * win_ms / 1000.0 + 0.5)))
    return w if w % 2 else w + 1


def moving_average(x, win_ms: float, fs: float) -> np.ndarray:
    """Centered moving mean; windows shrink symmetrically-truncated at the edges."""
    x = np.asarray(x, dtype=float)
    return moving_average_n(x, window_length(win_ms, fs))


def moving_average_n(x: np.ndarray, w: int) -> np.ndarray:
    n = x.size
    if n == 0:
        return x.copy()
    h = w // 2
    offset = x.mean()
    c = np.concatenate([[0.0], np.cumsum(x - offset)])
    i = np.arange(n)
    lo = np.maximum(i - h, 0)
    hi = np.minimum(i + h + 1, n)
    return (c[hi] - c[lo]) / (hi - lo) + offset


# ---------------------------------------------------------------------------
# Haar

def next_pow2(p: int) -> int:
    return 1 if p <= 1 else 1 << (int(p) - 1).bit_length()


def haar_forward(x) -> np.ndarray:
    """Full-depth orthonormal Haar transform after zero-padding to a power of two.

    Accepts a vector or a matrix of column signals. Coefficients are ordered
    ``[approx, coarsest detail, ..., finest detail]``.
    """
    x = np.asarray(x, dtype=float)
    vec = x.ndim == 1
    a = x[:, None] if vec else x
    p = a.shape[0]
    q = next_pow2(p)
    if q != p:
        a = np.vstack([a, np.zeros((q - p, a.shape[1]))])
    details = []
    s = np.sqrt(0.5)
    while a.shape[0] > 1:
        even, odd = a[0::2], a[1::2]
        details.append((even - odd) * s)
        a = (even + odd) * s
    out = np.vstack([a] + details[::-1]) if details else a.copy()
    return out[:, 0] if vec else out


def haar_inverse(coeffs) -> np.ndarray:
    """Inverse of :func:`haar_forward`; returns the padded-length signal."""
    c = np.asarray(coeffs, dtype=float)
    vec = c.ndim == 1
    c = c[:, None] if vec else c
    q = c.shape[0]
    if q & (q - 1):
        raise ValidationError("coefficient length must be a power of two")
    a = c[:1]
    pos = 1
    s = np.sqrt(0.5)
    while pos < q:
        d = c[pos:2 * pos]
        nxt = np.empty((2 * pos, c.shape[1]))
        nxt[0::2] = (a + d) * s
        nxt[1::2] = (a - d) * s
        a = nxt
        pos *= 2
    return a[:, 0] if vec else a


# ---------------------------------------------------------------------------
# spectra

def welch_psd(x, fs: float, win_s: float = 1.0, overlap: float = 0.5):
    """Averaged Hann-windowed periodogram (one-sided density, units^2/Hz)."""
    x = np.asarray(x, dtype=float)
    nperseg = int(round(win_s * fs))
    if x.size < nperseg or nperseg < 2:
        raise ValidationError(
            f"signal of {x.size} samples shorter than one {nperseg}-sample window")
    noverlap = int(round(overlap * nperseg))
    return signal.welch(x, fs=fs, window="hann", nperseg=nperseg,
                        noverlap=noverlap, detrend=False, scaling="density")


# ---------------------------------------------------------------------------
# polynomial fitting on t in [-1, 1]

def _abscissa(n: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n)


def polyfit(x, degree: int) -> np.ndarray:
    """Least-squares polynomial fit over ``t = linspace(-1, 1, len(x))``.

    Solved in the Legendre basis for conditioning; returned as power-basis
    coefficients in ``t``, lowest order first.
    """
    x = np.asarray(x, dtype=float)
    if degree < 0:
        raise ValidationError("degree must be non-negative")
    if x.size <= degree or x.size < 2:
        raise ValidationError(f"need more than {degree} samples (and at least 2) to fit")
    V = L.legvander(_abscissa(x.size), degree)
    c, *_ = np.linalg.lstsq(V, x, rcond=None)
    return L.leg2poly(c)


def polyeval(coefficients, n: int) -> np.ndarray:
    return np.polynomial.polynomial.polyval(_abscissa(n), np.asarray(coefficients, float))
