import warnings

import numpy as np
import pytest
from scipy import signal

from stimclean import dsp, library as lb, preprocess as pp
from stimclean.core import Recording, StimPeriods, ValidationError
from stimclean.synth import (ArtifactModel, LfpSpec, burst_intervals, colored_noise,
                             gen_artifact_track, gen_lfp, load_truth, make_semireal,
                             pulse_times, save_truth)

FS = 22000.0
STEADY = ArtifactModel(pulse_hz=FS / 170, mod_depth=(0.0, 0.0), onset_ratio=0.0, dc_ratio=0.0)


# -- LFP ---------------------------------------------------------------------

def test_zero_burst_amplitude_is_pure_noise():
    spec = LfpSpec(beta_amp=0.0)
    rec, events = gen_lfp(3.0, FS, spec, seed=4)
    assert len(events) == 0
    rng = np.random.default_rng(4)
    n = int(3 * FS)
    x = spec.background_rms * colored_noise(n, FS, spec.alpha, spec.knee_hz, rng)
    x += spec.white_rms * rng.standard_normal(n)
    assert np.array_equal(rec.samples, x)


@pytest.mark.parametrize("alpha", [1.0, 1.5, 2.0])
def test_psd_slope(alpha):
    x = colored_noise(int(60 * FS), FS, alpha, 1.0, np.random.default_rng(0))
    f, P = signal.welch(x, FS, nperseg=2 ** 16)
    band = (f >= 20) & (f <= 2000)
    slope = np.polyfit(np.log(f[band]), np.log(P[band]), 1)[0]
    assert abs(-slope - alpha) <= 0.1 * alpha


def test_colored_noise_unit_rms():
    x = colored_noise(10000, FS, 1.5, 1.0, np.random.default_rng(1))
    assert np.sqrt(np.mean(x ** 2)) == pytest.approx(1.0, rel=1e-12)
    assert colored_noise(0, FS, 1.5, 1.0, np.random.default_rng(1)).size == 0


def test_burst_duration_mean():
    spec = LfpSpec()
    durs = np.diff(burst_intervals(120.0, spec, np.random.default_rng(0)), axis=1)
    assert abs(durs.mean() - spec.burst_mean_s) <= 0.1 * spec.burst_mean_s


def test_bursts_disjoint_and_inside():
    b = burst_intervals(60.0, LfpSpec(), np.random.default_rng(1))
    assert np.all(b[:, 1] > b[:, 0]) and np.all(b[1:, 0] > b[:-1, 1])
    assert b[0, 0] >= 0 and b[-1, 1] <= 60.0


def test_gen_lfp_deterministic():
    a, ea = gen_lfp(2.0, FS, seed=9)
    b, eb = gen_lfp(2.0, FS, seed=9)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(ea.events, eb.events)


# -- artifact track ------------------------------------------------------------

def test_constant_model_gives_identical_pulses():
    n = int(2 * FS)
    art = gen_artifact_track(StimPeriods(np.array([[1000, n - 1000]])), STEADY, FS, n)
    segs = np.stack([art[s:s + 170] for s in range(1000, n - 1200, 170)])
    assert np.array_equal(segs, np.broadcast_to(segs[0], segs.shape))


def test_off_periods_exactly_zero():
    sched = np.array([[2000, 6000], [12000, 15000]])
    m = ArtifactModel(dc_ratio=0.0)
    art = gen_artifact_track(StimPeriods(sched), m, FS, 20000)
    support = int(np.ceil(m.support_ms * FS / 1000)) + 1
    assert np.all(art[:2000] == 0)
    for (a, b), nxt in zip(sched, (12000, 20000)):
        last = pulse_times(a, b, FS, m.pulse_hz)[-1]
        assert np.all(art[int(np.ceil(last)) + support:nxt] == 0)
        assert np.any(art[a:b] != 0)


def test_dc_transient_signs():
    sched = StimPeriods(np.array([[5000, 15000]]))
    m = ArtifactModel()
    dc = gen_artifact_track(sched, m, FS, 40000) \
        - gen_artifact_track(sched, ArtifactModel(dc_ratio=0.0), FS, 40000)
    assert dc[5000] == pytest.approx(m.dc_ratio * m.amplitude, rel=1e-12)
    # the onset transient has decayed to ~1e-4 of its start by the offset
    assert dc[15000] == pytest.approx(-m.dc_ratio * m.amplitude, rel=1e-3)
    assert np.all(dc[:5000] == 0)


def test_model_validation():
    with pytest.raises(ValidationError):
        ArtifactModel(amplitude=-1.0)
    with pytest.raises(ValidationError):
        ArtifactModel(mod_depth=(0.6, 0.5))
    with pytest.raises(ValidationError):
        ArtifactModel(support_ms=8.0)


@pytest.fixture(scope="module")
def modulated():
    m = ArtifactModel(onset_ratio=0.0, dc_ratio=0.0)
    sched = np.array([[int((0.2 + 0.7 * k) * FS), int((0.6 + 0.7 * k) * FS)] for k in range(10)])
    n = int(7.4 * FS)
    art = gen_artifact_track(StimPeriods(sched), m, FS, n)
    pk = pp.detect_peaks(Recording(art))
    tj = np.concatenate([pulse_times(a, b, FS, m.pulse_hz) for a, b in sched])
    j = np.searchsorted(tj, pk) - 1
    mx = np.array([art[p - 22:p + 158].max() for p in pk])
    return m, tj, j, mx


def test_peak_track_round_trip(modulated):
    m, tj, j, mx = modulated
    assert j.size == tj.size and np.array_equal(j, np.arange(tj.size))
    # sampled ground truth: the rendered pulse at its own sub-sample phase
    k = np.ceil(tj[j])[:, None] + np.arange(200)[None, :]
    sampled = (m.gain(tj[j] / FS)[:, None] * m.shape((k - tj[j][:, None]) / FS)).max(axis=1)
    assert np.max(np.abs(mx - sampled) / sampled) < 0.02


@pytest.mark.xfail(strict=True, reason="sampled maxima lose up to ~2.1% to sub-sample phase")
def test_peak_track_matches_continuous_gain(modulated):
    m, tj, j, mx = modulated
    A = m.gain(tj[j] / FS) * m.peak_gain()
    assert np.max(np.abs(mx - A) / A) < 0.02


# -- semi-real -----------------------------------------------------------------

def test_construction_identity(small_suite):
    _, data = small_suite
    for semi, truth in zip(data.semireal, data.truths):
        assert np.allclose(semi.samples - truth.artifact - truth.trend, truth.base_lfp,
                           rtol=0, atol=1e-9)


def test_truth_round_trip(tmp_path, small_suite):
    _, data = small_suite
    semi, truth = data.semireal[0], data.truths[0]
    save_truth(tmp_path, semi, truth, peaks=np.array([5, 9]), bursts=data.base_events[0])
    back, t2, peaks = load_truth(tmp_path)
    assert np.array_equal(back.samples, semi.samples.astype(np.float32).astype(float))
    assert np.array_equal(t2.schedule.periods, truth.schedule.periods)
    assert list(peaks) == [5, 9]
    assert (tmp_path / "bursts.csv").exists()


def test_semireal_validation(small_suite):
    _, data = small_suite
    rec = data.adbs[0].recording
    with pytest.raises(ValidationError):
        make_semireal(rec, data.library, Recording(np.zeros(10)))
    with pytest.raises(ValidationError):
        make_semireal(Recording(np.zeros(len(rec))), data.library, Recording(np.zeros(len(rec))))


@pytest.fixture(scope="module")
def averaging():
    """Identical artifacts plus independent white noise in every recording."""
    sigma, n = 2.0, int(6 * FS)
    art = gen_artifact_track(StimPeriods(np.array([[2000, n - 2000]])), STEADY, FS, n)
    base = Recording(np.zeros(n))

    def semi(noise):
        recs = [Recording(art + noise * np.random.default_rng(i).standard_normal(n),
                          id=f"r{i}", amplitude=1000.0) for i in range(4)]
        lib = lb.build_library(recs[:3])
        feats = lb.select_features(list(lib.entries) + [lb.build_entry(recs[3])])
        return make_semireal(recs[3], lib, base)[1].artifact, feats

    noisy, feats = semi(sigma)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")   # identical medians select a single feature
        clean, _ = semi(0.0)
    return noisy - clean, sigma, feats


def test_neighbour_mean_unselected_coefficients(averaging):
    d, sigma, feats = averaging
    starts = np.arange(int(1.2 * FS), int(4.8 * FS), 170)
    W = dsp.haar_forward(np.stack([d[s:s + 180] for s in starts], axis=1))
    other = np.setdiff1d(np.arange(W.shape[0]), feats.selected_idx)
    # coefficients the neighbour search never looks at follow the variance-of-mean law
    assert np.mean(W[other] ** 2) <= sigma ** 2 / 250


@pytest.mark.xfail(strict=True, reason="neighbours are chosen on noisy features, so their "
                                       "mean keeps part of the query's own noise")
def test_neighbour_mean_suppresses_pool_noise(averaging):
    d, sigma, _ = averaging
    core = slice(int(1 * FS), int(5 * FS))
    assert np.mean(d[core] ** 2) <= sigma ** 2 / 250


def test_small_pool_warns():
    n = int(3 * FS)
    art = gen_artifact_track(StimPeriods(np.array([[1000, n - 1000]])), STEADY, FS, n)
    recs = [Recording(art + np.random.default_rng(i).standard_normal(n), id=f"r{i}")
            for i in range(2)]
    lib = lb.build_library(recs)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        _, truth = make_semireal(recs[0], lib, Recording(np.zeros(n)), K=5000)
    assert any("fewer than K" in str(x.message) for x in w)
    assert truth.flags
