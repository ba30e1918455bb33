import math

import numpy as np
import pytest

from todachain.model import Boundary, ChainSpec
from todachain.ness import (
    NessConfig,
    estimator_agreement,
    pinning_sweep,
    run_many,
    run_ness,
    scaling_exponent,
)

SHORT = dict(steps_relax=100_000, steps_measure=800_000, measure_stride=10, n_runs=4)


def short_config(n=8, **kw):
    args = dict(SHORT)
    args.update(kw)
    return NessConfig(ChainSpec(n), **args)


# --- pure arithmetic ----------------------------------------------------------------


def test_estimator_agreement_examples():
    assert estimator_agreement([1.0, 1.0, 1.0]) == 0.0
    assert estimator_agreement([1.0, 1.0, 1.1]) == pytest.approx(0.1 / (3.1 / 3), abs=1e-12)
    assert round(estimator_agreement([1.0, 1.0, 1.1]), 4) == 0.0968
    with pytest.raises(ValueError):
        estimator_agreement([0.0, 0.0, 0.0])


def test_scaling_exponent_examples():
    assert scaling_exponent([(100, 0.1), (200, 0.05)]) == pytest.approx(1.0)
    assert scaling_exponent([(100, 0.3), (200, 0.3)]) == pytest.approx(0.0)
    pts = [(100, 1.0), (200, 2.0**-0.88)]
    assert scaling_exponent(pts) == pytest.approx(0.88)
    # two-point rule looks only at the two largest N
    assert scaling_exponent([(10, 5.0), (100, 0.1), (200, 0.05)]) == pytest.approx(1.0)
    power = [(n, 3.0 * n**-0.7) for n in (32, 64, 128)]
    assert scaling_exponent(power, "lstsq") == pytest.approx(0.7)


@pytest.mark.parametrize("pts", [[(10, 1.0)], [(10, 1.0), (20, -1.0)], [(10, 1.0), (10, 2.0)]])
def test_scaling_exponent_rejects_bad_input(pts):
    with pytest.raises(ValueError):
        scaling_exponent(pts)


# --- configuration ---------------------------------------------------------------------


@pytest.mark.parametrize("kw", [
    dict(steps_relax=0), dict(steps_measure=0), dict(measure_stride=0), dict(n_runs=0),
    dict(steps_measure=10, measure_stride=10),
])
def test_ness_config_validation(kw):
    with pytest.raises(ValueError):
        short_config(**kw)


def test_ness_rejects_non_fixed_chain():
    with pytest.raises(ValueError, match="FIXED"):
        NessConfig(ChainSpec(8, Boundary.PERIODIC))


# --- short simulations ------------------------------------------------------------------


def test_equilibrium_gives_zero_current_and_gibbs_temperatures():
    res = run_ness(short_config(16, t_left=2.0, t_right=2.0, master_seed=1, n_runs=8,
                                steps_relax=200_000, steps_measure=3_000_000))
    assert res.temp_profile.shape == (16,) and res.current_profile.shape == (15,)
    for j, err in zip(res.currents, (res.j_bulk_err, res.j_left_err, res.j_right_err)):
        assert abs(j) <= 3 * err
    assert np.all(np.abs(res.temp_profile - 2.0) <= 3 * res.temp_err)


def test_heat_flows_hot_to_cold_and_reverses_on_swap():
    fwd = run_ness(short_config(8, t_left=4.0, t_right=1.0, master_seed=2))
    rev = run_ness(short_config(8, t_left=1.0, t_right=4.0, master_seed=3))
    assert all(j > 0 for j in fwd.currents)
    assert all(j < 0 for j in rev.currents)
    err = math.hypot(fwd.j_bulk_err, rev.j_bulk_err)
    assert abs(fwd.j_bulk + rev.j_bulk) <= 3 * err
    terr = np.hypot(fwd.temp_err, rev.temp_err[::-1])
    assert np.all(np.abs(fwd.temp_profile - rev.temp_profile[::-1]) <= 3 * terr + 1e-12)


def test_single_run_uses_block_errors():
    res = run_ness(short_config(6, n_runs=1))
    assert np.all(np.isfinite(res.temp_err)) and res.j_bulk_err > 0
    assert "blocks" in res.metadata["error_bars"]
    assert res.seeds == [[0, 0]]


def test_positions_and_metadata():
    res = run_ness(short_config(5, n_runs=2, steps_measure=80_000))
    np.testing.assert_allclose(res.positions, np.arange(1, 6) / 5)
    for key in ("dt", "master_seed", "rng", "steps_relax", "steps_measure", "scheme"):
        assert key in res.metadata


def test_sweep_single_nu_matches_run_ness_and_ordering():
    cfg = short_config(6, n_runs=2, steps_measure=80_000)
    single = run_ness(cfg)
    (nu, swept), = pinning_sweep(cfg, [1.0])
    assert nu == 1.0 and swept.j_bulk == single.j_bulk
    assert np.array_equal(swept.temp_profile, single.temp_profile)
    out = pinning_sweep(cfg, [2.0, 0.0, 0.5])
    assert [v for v, _ in out] == [0.0, 0.5, 2.0]
    with pytest.raises(ValueError):
        pinning_sweep(cfg, [-1.0])


def test_results_independent_of_worker_count():
    cfgs = [short_config(n, n_runs=2, steps_measure=80_000) for n in (5, 7)]
    a = run_many(cfgs, workers=1)
    b = run_many(cfgs, workers=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.temp_profile, y.temp_profile)
        assert np.array_equal(x.current_profile, y.current_profile)
        assert x.currents == y.currents
