import math

import numpy as np
import pytest
from harmonic_fixture import harmonic_ness

from todachain.integrator import (
    CHUNK_STEPS,
    BathSpec,
    RngStream,
    Scheme,
    StepperConfig,
    deterministic_step,
    evolve,
    langevin_step,
    ou_coefficients,
)
from todachain.model import (
    BlowUpError,
    Boundary,
    ChainSpec,
    State,
    center_of_mass_invariant,
    total_energy,
)


def open_chain_state(m=20, seed=0, scale=0.5):
    spec = ChainSpec(m, Boundary.OPEN)
    rng = np.random.default_rng(seed)
    return spec, State(rng.uniform(-scale, scale, m), rng.uniform(-scale, scale, m))


def batch_mean_se(x, n_batches=50):
    b = np.array_split(np.asarray(x), n_batches)
    means = np.array([c.mean() for c in b])
    return means.mean(), means.std(ddof=1) / math.sqrt(n_batches)


# --- configuration ---------------------------------------------------------------


def test_bath_and_stepper_validation():
    with pytest.raises(ValueError):
        BathSpec(-1.0, 1.0, 1.0, 1, 2)
    with pytest.raises(ValueError):
        BathSpec(1.0, 0.0, 1.0, 1, 2)
    with pytest.raises(ValueError):
        StepperConfig(dt=0.0)
    spec = ChainSpec(4)
    with pytest.raises(ValueError):
        BathSpec(1.0, 1.0, 1.0, 0, 4).validate(spec)  # wall site
    BathSpec.for_fixed_chain(spec, 1.0, 4.0, 1.0).validate(spec)


def test_ou_coefficients():
    b = BathSpec(0.7, 2.0, 3.0, 1, 2)
    decay, kick = ou_coefficients(b, 0.01)
    assert decay[0] == pytest.approx(math.exp(-0.7 * 0.005))
    np.testing.assert_allclose(kick, np.sqrt(np.array([2.0, 3.0]) * (1 - math.exp(-0.7 * 0.01))))


def test_rng_stream_contract():
    a = RngStream(42, 3).normals(1000)
    b = RngStream(42, 3).normals(1000)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, RngStream(42, 4).normals(1000))
    s = RngStream(9)
    parts = np.concatenate([s.normals((3, 4)).ravel(), s.normals((5, 4)).ravel()])
    assert np.array_equal(parts, RngStream(9).normals((8, 4)).ravel())


# --- deterministic stepping ---------------------------------------------------------


def test_harmonic_oscillator_follows_cosine():
    spec = ChainSpec(1, Boundary.OPEN, nu=1.0, z=2)
    errs = []
    for dt in (2 * math.pi / 1000, 2 * math.pi / 2000):
        n = int(round(2 * math.pi / dt))
        traj = []
        evolve(State([1.0], [0.0]), spec, StepperConfig(dt), n,
               observer=lambda k, s: traj.append((k * dt, s.q[0])))
        t, q = np.array(traj).T
        errs.append(np.max(np.abs(q - np.cos(t))))
    assert errs[0] < 2 * (2 * math.pi / 1000) ** 2
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_zero_force_state_is_stationary():
    spec = ChainSpec(10, Boundary.PERIODIC)
    out = evolve(State.zeros(spec), spec, StepperConfig(0.01), 100)
    assert np.all(out.q == 0) and np.all(out.p == 0)
    assert out.t == pytest.approx(1.0)


@pytest.mark.parametrize("boundary", list(Boundary))
def test_time_reversibility(boundary):
    spec = ChainSpec(20, boundary, z=4 if boundary == Boundary.OPEN else 2)
    rng = np.random.default_rng(1)
    m = spec.total_sites
    st = State(rng.uniform(-1, 1, m), rng.uniform(-1, 1, m))
    if boundary == Boundary.FIXED:
        st.q[[0, -1]] = st.p[[0, -1]] = 0.0
    cfg = StepperConfig(1e-3)
    fwd = evolve(st, spec, cfg, 5000)
    back = evolve(State(fwd.q, -fwd.p), spec, cfg, 5000)
    scale = max(1.0, np.abs(st.q).max(), np.abs(st.p).max())
    assert np.max(np.abs(back.q - st.q)) / scale <= 1e-10
    assert np.max(np.abs(-back.p - st.p)) / scale <= 1e-10


def test_single_step_functions_return_new_state():
    spec, st = open_chain_state(5)
    q0 = st.q.copy()
    new = deterministic_step(st, spec, 1e-3)
    assert np.array_equal(st.q, q0) and not np.array_equal(new.q, q0)
    assert new.t == pytest.approx(1e-3)


def test_frozen_sites_stay_bitwise_zero():
    spec = ChainSpec(12)
    baths = BathSpec.for_fixed_chain(spec, 1.0, 4.0, 1.0)
    out = evolve(State.zeros(spec), spec, StepperConfig(0.005, 3, Scheme.LANGEVIN), 20000, baths)
    for x in (out.q[0], out.p[0], out.q[-1], out.p[-1]):
        assert x == 0.0 and math.copysign(1.0, x) == 1.0


def test_energy_and_hc_conservation_short():
    spec, st = open_chain_state(20)
    h0, c0 = total_energy(st, spec), center_of_mass_invariant(st, spec)
    drift = [0.0, 0.0]

    def obs(_, s):
        drift[0] = max(drift[0], abs(total_energy(s, spec) - h0) / max(1, abs(h0)))
        drift[1] = max(drift[1], abs(center_of_mass_invariant(s, spec) - c0) / max(1, abs(c0)))

    evolve(st, spec, StepperConfig(1e-4), 1_000_000, observer=obs, stride=1000)
    assert drift[0] <= 1e-6 and drift[1] <= 1e-6


def _max_energy_error(spec, st, dt, t_end):
    h0 = total_energy(st, spec)
    worst = [0.0]

    def obs(_, s):
        worst[0] = max(worst[0], abs(total_energy(s, spec) - h0))

    stride = max(1, int(round(0.01 / dt)))
    evolve(st, spec, StepperConfig(dt), int(round(t_end / dt)), observer=obs, stride=stride)
    return worst[0]


def test_second_order_energy_convergence():
    spec, st = open_chain_state(20, scale=1.0)
    e1 = _max_energy_error(spec, st, 2e-3, 100.0)
    e2 = _max_energy_error(spec, st, 1e-3, 100.0)
    assert 3.5 <= e1 / e2 <= 4.5


def test_ring_energy_drift_scales_with_dt_squared():
    spec = ChainSpec(200, Boundary.PERIODIC)
    st = State.zeros(spec)
    st.q[0], st.p[1], st.q[2] = -1.0, 1.0, 1.0
    ratio = _max_energy_error(spec, st, 1e-3, 100.0) / _max_energy_error(spec, st, 1e-4, 100.0)
    assert 70 <= ratio <= 130


def test_blow_up_reports_step():
    spec = ChainSpec(2, Boundary.OPEN)
    st = State([0.0, -800.0], [0.0, 0.0])
    with pytest.raises(BlowUpError) as info:
        evolve(st, spec, StepperConfig(1e-3), 100, stride=10)
    assert info.value.step == 10


# --- Langevin stepping -----------------------------------------------------------------


def test_mu_zero_is_bitwise_verlet():
    spec = ChainSpec(16)
    rng = np.random.default_rng(4)
    st = State(np.r_[0, rng.uniform(-1, 1, 16), 0], np.r_[0, rng.uniform(-1, 1, 16), 0])
    baths = BathSpec.for_fixed_chain(spec, 0.0, 4.0, 1.0)
    a = evolve(st, spec, StepperConfig(0.005, 1, Scheme.LANGEVIN), 5000, baths)
    b = evolve(st, spec, StepperConfig(0.005), 5000)
    assert np.array_equal(a.q, b.q) and np.array_equal(a.p, b.p)
    one = langevin_step(st, spec, baths, 0.005, RngStream(0))
    ref = deterministic_step(st, spec, 0.005)
    assert np.array_equal(one.p, ref.p)


def test_stream_continuity_across_calls():
    spec = ChainSpec(8)
    baths = BathSpec.for_fixed_chain(spec, 1.0, 3.0, 1.0)
    cfg = StepperConfig(0.005, 0, Scheme.LANGEVIN)
    k, m = CHUNK_STEPS + 123, 777
    whole = evolve(State.zeros(spec), spec, cfg, k + m, baths, rng=RngStream(5))
    rng = RngStream(5)
    part = evolve(State.zeros(spec), spec, cfg, k, baths, rng=rng)
    part = evolve(part, spec, cfg, m, baths, rng=rng)
    assert np.array_equal(whole.q, part.q) and np.array_equal(whole.p, part.p)
    strided = evolve(State.zeros(spec), spec, cfg, k + m, baths, rng=RngStream(5),
                     observer=lambda *_: None, stride=100)
    assert np.array_equal(whole.p, strided.p)


def test_evolve_zero_steps_and_determinism():
    spec, st = open_chain_state(6)
    out = evolve(st, spec, StepperConfig(1e-3), 0)
    assert np.array_equal(out.q, st.q) and out is not st
    spec = ChainSpec(6)
    baths = BathSpec.for_fixed_chain(spec, 1.0, 2.0, 1.0)
    cfg = StepperConfig(0.005, 11, Scheme.LANGEVIN)
    a = evolve(State.zeros(spec), spec, cfg, 10000, baths)
    b = evolve(State.zeros(spec), spec, cfg, 10000, baths)
    assert np.array_equal(a.p, b.p)


def _single_site_samples(temp, n_steps, mu=1.0, dt=0.005, seed=0, stride=10):
    spec = ChainSpec(1, Boundary.OPEN, nu=1.0, z=2)
    baths = BathSpec(mu, temp, temp, 0, None)
    q2, p2 = [], []

    def obs(_, s):
        q2.append(s.q[0] ** 2)
        p2.append(s.p[0] ** 2)

    evolve(State([0.0], [0.0]), spec, StepperConfig(dt, seed, Scheme.LANGEVIN), n_steps,
           baths, observer=obs, stride=stride)
    return np.array(q2), np.array(p2)


def test_single_site_thermostat_stationary_moments():
    q2, p2 = _single_site_samples(2.0, 1_000_000)
    for x in (q2[100:], p2[100:]):
        m, se = batch_mean_se(x)
        assert abs(m - 2.0) <= 3 * se


def test_cold_bath_drains_energy():
    """A near-zero temperature bath damps a pinned oscillator towards rest."""
    spec = ChainSpec(1, Boundary.OPEN, nu=1.0, z=2)
    baths = BathSpec(0.5, 1e-300, 1e-300, 0, None)
    period = int(round(2 * math.pi / 0.005))
    energies = []
    evolve(State([1.0], [0.0]), spec, StepperConfig(0.005, 0, Scheme.LANGEVIN), 20 * period,
           baths, observer=lambda _, s: energies.append(total_energy(s, spec)), stride=period)
    e = np.array(energies)
    assert np.all(np.diff(e) < 0)
    assert e[-1] < 1e-3 * 0.5


# --- harmonic-chain oracle -----------------------------------------------------------


def test_harmonic_chain_current_is_size_independent():
    res = {}
    for n in (16, 32, 64):
        js = [harmonic_ness(n, run_index=r)[0] for r in range(4)]
        res[n] = (np.mean(js), np.std(js, ddof=1) / 2)
    ns = sorted(res)
    for i, a in enumerate(ns):
        for b in ns[i + 1:]:
            (ja, ea), (jb, eb) = res[a], res[b]
            assert abs(ja - jb) <= 3 * math.hypot(ea, eb)
