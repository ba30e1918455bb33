import math

import numpy as np
import pytest

from todachain.model import Boundary, ChainSpec
from todachain.ring import (
    RingConfig,
    dominant_frequency,
    envelope,
    persistence_ratio,
    run_ring,
)


def ring(total=50, **kw):
    return ChainSpec(total, Boundary.PERIODIC, **kw)


# --- envelope -----------------------------------------------------------------------


def test_envelope_of_sine():
    t = np.arange(0, 200, 0.01)
    centers, emax, emin = envelope(t, np.sin(t), 2000)
    assert len(centers) == 10
    np.testing.assert_allclose(emax, 1.0, atol=1e-4)
    np.testing.assert_allclose(emin, -1.0, atol=1e-4)
    assert centers[0] == pytest.approx(0.5 * (t[0] + t[1999]))


def test_envelope_of_constant_has_gaps():
    _, emax, emin = envelope(np.arange(100.0), np.ones(100), 10)
    assert np.all(np.isnan(emax)) and np.all(np.isnan(emin))


def test_envelope_of_damped_sine_decays_exponentially():
    tau = 50.0
    t = np.arange(0, 400, 0.01)
    x = np.exp(-t / tau) * np.sin(t)
    window = int(round(2 * math.pi * 4 / 0.01))
    centers, emax, _ = envelope(t, x, window)
    ok = np.isfinite(emax)
    slope = np.polyfit(centers[ok], np.log(emax[ok]), 1)[0]
    assert slope == pytest.approx(-1 / tau, rel=0.02)
    assert persistence_ratio(centers, emax, -emax, t[-1]) < 0.01


def test_envelope_window_validation():
    with pytest.raises(ValueError):
        envelope(np.arange(10.0), np.arange(10.0), 2)


def test_persistence_ratio_flat_envelope():
    c = np.linspace(5, 95, 10)
    assert persistence_ratio(c, np.full(10, 2.0), np.full(10, -2.0), 100.0) == pytest.approx(1.0)


# --- dominant frequency -------------------------------------------------------------------


def test_dominant_frequency_of_sine():
    t = np.arange(0, 200, 0.01)
    omega, power = dominant_frequency(np.sin(t), 0.01)
    assert omega == pytest.approx(1.0, rel=0.01)
    assert power > 0


def test_dominant_frequency_picks_largest_peak():
    t = np.arange(0, 200, 0.01)
    omega, _ = dominant_frequency(np.sin(3 * t) + 0.1 * np.sin(t), 0.01)
    assert omega == pytest.approx(3.0, rel=0.01)


def test_dominant_frequency_ignores_offset():
    t = np.arange(0, 300, 0.05)
    omega, _ = dominant_frequency(5.0 + 0.2 * np.cos(2.5 * t), 0.05)
    assert omega == pytest.approx(2.5, rel=0.01)


def test_dominant_frequency_rejects_constant():
    with pytest.raises(ValueError):
        dominant_frequency(np.zeros(100), 0.1)


# --- ring runs -------------------------------------------------------------------------------


def test_ring_config_validation():
    with pytest.raises(ValueError):
        RingConfig(ChainSpec(10))
    with pytest.raises(ValueError):
        RingConfig(ring(10), initial_q=((10, 1.0),))
    with pytest.raises(ValueError):
        RingConfig(ring(10), t_final=-1.0)
    with pytest.raises(ValueError):
        RingConfig(ring(10, nu=0.0)).window_time


def test_sample_count_and_initial_state():
    cfg = RingConfig(ring(20), dt=1e-3, t_final=10.0, sample_stride=30)
    assert cfg.n_samples == math.floor(10.0 / 0.03) + 1
    st = cfg.initial_state()
    assert (st.q[0], st.p[1], st.q[2]) == (-1.0, 1.0, 1.0)
    assert np.count_nonzero(st.q) + np.count_nonzero(st.p) == 3


def test_zero_initial_condition_gives_zero_current():
    cfg = RingConfig(ring(20), dt=1e-3, t_final=20.0, sample_stride=10, initial_q=(),
                     initial_p=(), envelope_window=5.0)
    series = run_ring(cfg)
    assert np.all(series.current == 0.0)
    assert math.isnan(series.omega)


def test_short_harmonic_ring_run():
    cfg = RingConfig(ring(50), dt=1e-3, t_final=400.0, sample_stride=50, envelope_window=40.0)
    s = run_ring(cfg)
    assert len(s.times) == cfg.n_samples == len(s.current)
    assert s.energy_drift <= 1e-6 and s.hc_drift <= 1e-6
    assert s.omega == pytest.approx(1.0, rel=0.05)
    assert np.all(np.diff(s.window_centers) > 0)
    assert s.metadata["frequency_convention"].startswith("angular")


def test_ring_dt_robustness_over_short_time():
    kw = dict(t_final=100.0, envelope_window=20.0)
    coarse = run_ring(RingConfig(ring(200), dt=1e-3, sample_stride=10, **kw))
    fine = run_ring(RingConfig(ring(200), dt=1e-4, sample_stride=100, **kw))
    np.testing.assert_allclose(coarse.times, fine.times)
    scale = np.nanmean(0.5 * (np.abs(fine.env_max) + np.abs(fine.env_min)))
    assert np.max(np.abs(coarse.current - fine.current)) <= 0.01 * scale
