import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stimclean import dsp
from stimclean.core import ValidationError

FS = 22000.0
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


# -- filter design ----------------------------------------------------------

def test_notch_60hz_gain():
    notch = dsp.design_filter("notch", 2, 60.0, Q=200, fs=FS)
    assert notch.gain_db(60.0)[0] < -40
    assert notch.gain_db(55.0)[0] > -1


def test_bandpass_beta_response():
    bp = dsp.design_filter("butterworth_bp", 2, (3.0, 37.0), fs=FS)
    assert bp.gain_db(20.0)[0] > -1
    # one pass reaches about -17 dB at 100 Hz; the forward-backward pass squares it
    assert bp.gain_db(100.0, zero_phase=True)[0] < -20


def test_peak_unit_gain_at_centre():
    pk = dsp.design_filter("peak", 2, 25.0, Q=3, fs=FS)
    assert abs(pk.gain_db(25.0)[0]) < 1e-9


@pytest.mark.parametrize("kind,freqs", [("notch", 60.0), ("peak", 21.0),
                                        ("butterworth_hp", 300.0),
                                        ("butterworth_bp", (3.0, 37.0))])
def test_designs_are_stable(kind, freqs):
    ch = dsp.design_filter(kind, 3 if kind.startswith("butter") else 2, freqs, Q=3, fs=FS)
    assert ch.is_stable()
    assert np.all(np.abs(ch.poles()) < 1)


@pytest.mark.parametrize("freqs", [0.0, -5.0, 11000.0, 20000.0])
def test_frequency_outside_nyquist_rejected(freqs):
    with pytest.raises(ValidationError):
        dsp.design_filter("butterworth_hp", 3, freqs, fs=FS)


def test_notch_without_q_rejected():
    with pytest.raises(ValidationError):
        dsp.design_filter("notch", 2, 60.0, fs=FS)


def test_notch_harmonics_covers_3khz():
    ch = dsp.notch_harmonics(FS)
    assert ch.n_sections == 50
    assert np.all(ch.gain_db(np.arange(60.0, 3001.0, 60.0)) < -40)


# -- filtering ----------------------------------------------------------------

def test_filtfilt_zero_in_zero_out():
    bp = dsp.design_filter("butterworth_bp", 2, (3.0, 37.0), fs=FS)
    assert np.all(dsp.filtfilt(bp, np.zeros(1000)) == 0)


def test_filtfilt_removes_line_tone():
    t = np.arange(int(20 * FS)) / FS
    x = np.sin(2 * np.pi * 60 * t)
    y = dsp.filtfilt(dsp.design_filter("notch", 2, 60.0, Q=200, fs=FS), x)
    # the Q=200 resonator rings for about a second; score the steady state
    core = slice(int(8 * FS), int(12 * FS))
    assert np.sqrt(np.mean(y[core] ** 2)) < 0.01 * np.sqrt(np.mean(x[core] ** 2))


def test_filtfilt_has_no_group_delay():
    fs = 1000.0
    t = np.arange(4000) / fs
    x = np.sin(2 * np.pi * 20 * t)
    y = dsp.filtfilt(dsp.design_filter("butterworth_bp", 2, (3.0, 37.0), fs=fs), x)
    core = slice(1000, 3000)
    lags = np.arange(-20, 21)
    xc = [np.dot(x[core], np.roll(y, -k)[core]) for k in lags]
    assert lags[int(np.argmax(xc))] == 0


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.integers(50, 400), elements=finite))
def test_filtfilt_commutes_with_reversal(x):
    ch = dsp.design_filter("butterworth_bp", 2, (3.0, 37.0), fs=1000.0)
    a = dsp.filtfilt(ch, x[::-1])
    b = dsp.filtfilt(ch, x)[::-1]
    assert np.allclose(a, b, atol=1e-9 * (1 + np.abs(x).max()))


def test_filtfilt_rejects_nan():
    ch = dsp.design_filter("butterworth_hp", 3, 300.0, fs=FS)
    with pytest.raises(ValidationError):
        dsp.filtfilt(ch, np.array([0.0, np.nan, 1.0, 2.0]))


def test_causal_chunks_match_one_shot():
    ch = dsp.design_filter("peak", 2, 20.0, Q=3, fs=1000.0)
    x = np.random.default_rng(0).standard_normal(1000)
    whole = dsp.filter_causal(ch, x)
    zi = np.zeros((ch.n_sections, 2))
    parts = []
    for k in range(0, 1000, 137):
        y, zi = dsp.filter_causal(ch, x[k:k + 137], zi=zi)
        parts.append(y)
    assert np.array_equal(np.concatenate(parts), whole)


# -- moving average -------------------------------------------------------------

def test_window_length_is_odd():
    assert dsp.window_length(10.0, FS) == 221
    assert dsp.window_length(400.0, FS) == 8801
    assert dsp.window_length(1000.0 / 22.0 * 4, 22000.0) % 2 == 1


def test_moving_average_constant():
    assert np.allclose(dsp.moving_average_n(np.full(50, 3.5), 7), 3.5)


def test_moving_average_impulse():
    x = np.zeros(11)
    x[5] = 1.0
    y = dsp.moving_average_n(x, 3)
    assert np.allclose(y[4:7], 1 / 3)
    assert np.allclose(np.delete(y, [4, 5, 6]), 0)


def test_moving_average_keeps_degree6_polynomial_degree():
    t = np.linspace(-1, 1, 301)
    x = 1 + t - 2 * t ** 3 + 0.5 * t ** 6
    w = 21
    y = dsp.moving_average_n(x, w)[w:-w]
    # a centred mean of a degree-6 polynomial is again degree 6
    c = np.polynomial.polynomial.polyfit(t[w:-w], y, 6)
    assert np.allclose(np.polynomial.polynomial.polyval(t[w:-w], c), y, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 60, elements=finite), arrays(np.float64, 60, elements=finite),
       st.floats(-3, 3))
def test_moving_average_linear(x, z, a):
    lhs = dsp.moving_average_n(a * x + z, 5)
    rhs = a * dsp.moving_average_n(x, 5) + dsp.moving_average_n(z, 5)
    assert np.allclose(lhs, rhs, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 80, elements=finite), st.integers(1, 10))
def test_moving_average_shift_equivariant_inside(x, s):
    w = 7
    y = dsp.moving_average_n(x, w)
    ys = dsp.moving_average_n(np.roll(x, s), w)
    core = slice(w + s, 80 - w)
    assert np.allclose(ys[core], np.roll(y, s)[core], atol=1e-8)


# -- Haar ---------------------------------------------------------------------

def test_haar_constant():
    c = dsp.haar_forward(np.full(4, 3.0))
    assert np.allclose(c, [6.0, 0, 0, 0])


def test_haar_pads_180_to_256():
    assert dsp.haar_forward(np.ones(180)).size == 256
    assert dsp.next_pow2(180) == 256


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 300), elements=finite))
def test_haar_roundtrip_and_parseval(x):
    c = dsp.haar_forward(x)
    pad = np.concatenate([x, np.zeros(c.size - x.size)])
    scale = 1 + np.abs(x).max()
    assert np.max(np.abs(dsp.haar_inverse(c) - pad)) < 1e-12 * scale
    assert abs(np.linalg.norm(c) - np.linalg.norm(pad)) < 1e-12 * scale * np.sqrt(c.size)


def test_haar_matrix_columns_match_vectors():
    X = np.random.default_rng(1).standard_normal((180, 4))
    C = dsp.haar_forward(X)
    for j in range(4):
        assert np.allclose(C[:, j], dsp.haar_forward(X[:, j]))


def test_haar_inverse_needs_power_of_two():
    with pytest.raises(ValidationError):
        dsp.haar_inverse(np.ones(6))


# -- Welch ----------------------------------------------------------------------

def test_welch_white_noise_integrates_to_variance():
    fs = 1000.0
    x = 2.0 * np.random.default_rng(2).standard_normal(60_000)
    f, P = dsp.welch_psd(x, fs)
    assert abs(np.trapezoid(P, f) - 4.0) < 0.4


def test_welch_tone_peak_bin():
    fs = 1000.0
    t = np.arange(10_000) / fs
    f, P = dsp.welch_psd(np.sin(2 * np.pi * 25 * t), fs)
    assert f[np.argmax(P)] == 25.0


def test_welch_zero_and_short():
    f, P = dsp.welch_psd(np.zeros(3000), 1000.0)
    assert np.all(P == 0)
    with pytest.raises(ValidationError):
        dsp.welch_psd(np.zeros(10), 1000.0)


# -- polynomial fit -------------------------------------------------------------

def test_polyfit_exact_degree6():
    t = np.linspace(-1, 1, 500)
    x = 3 - t + 2 * t ** 2 + t ** 5 - 4 * t ** 6
    c = dsp.polyfit(x, 6)
    assert np.max(np.abs(x - dsp.polyeval(c, x.size))) < 1e-9 * np.abs(x).max()


def test_polyfit_line():
    c = dsp.polyfit(np.array([0.0, 1.0, 2.0, 3.0]), 1)
    # t runs over [-1, 1], so a unit step per sample is a slope of 1.5 in t
    assert np.allclose(c, [1.5, 1.5])
    assert np.allclose(dsp.polyeval(c, 4), [0, 1, 2, 3])


def test_polyfit_matches_qr_oracle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(2000).cumsum()
    t = np.linspace(-1, 1, x.size)
    V = np.vander(t, 7, increasing=True)
    Qm, R = np.linalg.qr(V)
    oracle = np.linalg.solve(R, Qm.T @ x)
    assert np.allclose(dsp.polyfit(x, 6), oracle, rtol=1e-8, atol=1e-8)


def test_polyfit_degenerate():
    with pytest.raises(ValidationError):
        dsp.polyfit(np.array([1.0]), 0)
    with pytest.raises(ValidationError):
        dsp.polyfit(np.arange(3.0), 6)
