"""Driven fixed chains: steady-state currents, profiles and scaling exponents."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numba
import numpy as np

from .integrator import CHUNK_STEPS, RNG_NAME, BathSpec, RngStream, _Engine, _langevin
from .model import BlowUpError, Boundary, ChainSpec, State

N_BLOCKS = 8


@dataclass(frozen=True)
class NessConfig:
    chain: ChainSpec
    mu: float = 1.0
    t_left: float = 4.0
    t_right: float = 1.0
    dt: float = 0.005
    steps_relax: int = 20_000_000
    steps_measure: int = 20_000_000
    measure_stride: int = 1000
    n_runs: int = 4
    master_seed: int = 0

    def __post_init__(self):
        if self.chain.boundary != Boundary.FIXED:
            raise ValueError("NESS runs need a FIXED boundary chain")
        if self.chain.n_dynamic < 3:
            raise ValueError("NESS runs need at least 3 dynamical sites")
        if self.steps_relax <= 0 or self.steps_measure <= 0:
            raise ValueError("steps_relax and steps_measure must be > 0")
        if self.measure_stride < 1:
            raise ValueError("measure_stride must be >= 1")
        if self.steps_measure < self.measure_stride * N_BLOCKS:
            raise ValueError("steps_measure too short for the measurement stride")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        BathSpec.for_fixed_chain(self.chain, self.mu, self.t_left, self.t_right)

    @property
    def baths(self) -> BathSpec:
        return BathSpec.for_fixed_chain(self.chain, self.mu, self.t_left, self.t_right)


@dataclass
class NessResult:
    """Steady-state averages over independent runs.

    ``temp_profile[i]`` is ``<p_j^2>`` for site ``j = i + 1``; ``current_profile[i]``
    is ``<J_j>`` for bond ``j = i + 1`` (bonds ``1..N-1``).  Standard errors come
    from the spread between runs, or between time blocks for a single run.
    """

    n: int
    nu: float
    z: int
    j_bulk: float
    j_left: float
    j_right: float
    j_bulk_err: float
    j_left_err: float
    j_right_err: float
    temp_profile: np.ndarray
    temp_err: np.ndarray
    current_profile: np.ndarray
    current_err: np.ndarray
    seeds: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def positions(self) -> np.ndarray:
        return np.arange(1, self.n + 1) / self.n

    @property
    def currents(self) -> tuple[float, float, float]:
        return self.j_bulk, self.j_left, self.j_right


@numba.njit(cache=True)
def _sample_block(q, p, f, dvp, xw, iw, a, b, nu2, z, bc, lo, hi, dt, sites, decay,
                  kick, noise, n_samples, stride, acc_p2, acc_j):
    """Advance ``n_samples * stride`` steps, accumulating after every ``stride``."""
    m = q.shape[0]
    nb = acc_j.shape[0]
    for s in range(n_samples):
        _langevin(q, p, f, dvp, xw, iw, a, b, nu2, z, bc, lo, hi, dt, sites, decay,
                  kick, noise[s * stride:(s + 1) * stride], stride)
        for i in range(m):
            acc_p2[i] += p[i] * p[i]
        for j in range(nb):
            acc_j[j] -= 0.5 * (p[j] + p[j + 1]) * dvp[j + 1]


def _single_run(config: NessConfig, run_index: int) -> dict:
    """One trajectory: relax, then measure in ``N_BLOCKS`` time blocks."""
    spec = config.chain
    n = spec.n_dynamic
    baths = config.baths
    rng = RngStream(config.master_seed, run_index)
    state = State.zeros(spec)
    eng = _Engine(state, spec, config.dt, baths, rng)
    done = 0
    while done < config.steps_relax:
        c = min(CHUNK_STEPS * 8, config.steps_relax - done)
        eng.advance(c)
        done += c
        if not np.isfinite(state.p).all():
            raise BlowUpError(f"run {run_index}: non-finite state during relaxation", done)

    stride = config.measure_stride
    total_samples = config.steps_measure // stride
    per_chunk = max(1, CHUNK_STEPS // stride)
    blocks_p2 = np.zeros((N_BLOCKS, spec.total_sites))
    blocks_j = np.zeros((N_BLOCKS, spec.n_bonds))
    counts = np.zeros(N_BLOCKS)
    bounds = np.linspace(0, total_samples, N_BLOCKS + 1).astype(int)
    nsite = len(eng.sites)
    for k in range(N_BLOCKS):
        left = bounds[k + 1] - bounds[k]
        while left > 0:
            c = min(per_chunk, left)
            noise = rng.normals((c * stride, 2 * nsite))
            _sample_block(state.q, state.p, *eng.ws.bufs, *eng.ws.params, config.dt,
                          eng.sites, eng.decay, eng.kick, noise, c, stride,
                          blocks_p2[k], blocks_j[k])
            left -= c
        counts[k] = bounds[k + 1] - bounds[k]
        if not np.isfinite(state.p).all():
            raise BlowUpError(f"run {run_index}: non-finite state during measurement",
                              config.steps_relax + bounds[k + 1] * stride)
    p2 = blocks_p2 / counts[:, None]
    jb = blocks_j / counts[:, None]
    return {
        "block_temp": p2[:, 1 : n + 1],
        "block_current": jb[:, 1:n],
        "block_weights": counts,
    }


def _estimators(temp: np.ndarray, current: np.ndarray, config: NessConfig) -> np.ndarray:
    """Rows of (J_bulk, J_L, J_R) from per-sample temperature and current arrays."""
    mu = config.mu
    j_bulk = current[:, 1:].mean(axis=1)
    j_left = mu * (config.t_left - temp[:, 0])
    j_right = mu * (temp[:, -1] - config.t_right)
    return np.column_stack([j_bulk, j_left, j_right])


def _mean_err(x: np.ndarray, w: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    k = x.shape[0]
    mean = np.average(x, axis=0, weights=w)
    if k < 2:
        return mean, np.full_like(np.atleast_1d(mean), np.nan)
    return mean, np.std(x, axis=0, ddof=1) / math.sqrt(k)


def _reduce(config: NessConfig, runs: list[dict], seeds: list) -> NessResult:
    if len(runs) > 1:
        temp = np.array([np.average(r["block_temp"], axis=0, weights=r["block_weights"])
                         for r in runs])
        cur = np.array([np.average(r["block_current"], axis=0, weights=r["block_weights"])
                        for r in runs])
        weights = None
    else:
        temp, cur = runs[0]["block_temp"], runs[0]["block_current"]
        weights = runs[0]["block_weights"]
    t_mean, t_err = _mean_err(temp, weights)
    c_mean, c_err = _mean_err(cur, weights)
    j_mean, j_err = _mean_err(_estimators(temp, cur, config), weights)
    spec = config.chain
    return NessResult(
        n=spec.n_dynamic,
        nu=spec.nu,
        z=spec.z,
        j_bulk=float(j_mean[0]),
        j_left=float(j_mean[1]),
        j_right=float(j_mean[2]),
        j_bulk_err=float(j_err[0]),
        j_left_err=float(j_err[1]),
        j_right_err=float(j_err[2]),
        temp_profile=t_mean,
        temp_err=t_err,
        current_profile=c_mean,
        current_err=c_err,
        seeds=seeds,
        metadata={
            "master_seed": config.master_seed,
            "n_runs": config.n_runs,
            "dt": config.dt,
            "steps_relax": config.steps_relax,
            "steps_measure": config.steps_measure,
            "measure_stride": config.measure_stride,
            "scheme": "langevin",
            "rng": RNG_NAME,
            "error_bars": "between-run" if len(runs) > 1 else f"{N_BLOCKS} time blocks",
        },
    )


def _job(args):
    config, run_index = args
    return _single_run(config, run_index)


def run_jobs(jobs: Sequence[tuple[NessConfig, int]], workers: int = 1) -> list[dict]:
    """Execute independent trajectories; results come back in job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


def run_ness(config: NessConfig, workers: int = 1) -> NessResult:
    """Relax to the steady state and measure currents and profiles.

    Every run starts from rest; run ``k`` draws its noise from the stream
    ``(master_seed, k)``.

    Raises:
        BlowUpError: if any trajectory goes non-finite.
    """
    t0 = time.perf_counter()
    jobs = [(config, k) for k in range(config.n_runs)]
    runs = run_jobs(jobs, workers)
    result = _reduce(config, runs, [[config.master_seed, k] for k in range(config.n_runs)])
    result.metadata["wall_clock_s"] = time.perf_counter() - t0
    return result


def estimator_agreement(result: NessResult | Sequence[float]) -> float:
    """Largest pairwise gap among the three current estimators over their mean."""
    js = np.asarray(result.currents if isinstance(result, NessResult) else result, float)
    mean = js.mean()
    if mean == 0:
        raise ValueError("estimator agreement is undefined for zero mean current")
    return float((js.max() - js.min()) / abs(mean))


def scaling_exponent(points: Sequence[tuple[float, float]], method: str = "two_point") -> float:
    """Exponent ``alpha`` in ``J ~ N^-alpha``.

    ``two_point`` uses the two largest ``N``; ``lstsq`` fits ``ln J`` against
    ``ln N`` over all points.
    """
    pts = sorted((float(n), float(j)) for n, j in points)
    if len(pts) < 2:
        raise ValueError("need at least two (N, J) points")
    if any(j <= 0 for _, j in pts) or any(n <= 0 for n, _ in pts):
        raise ValueError("scaling exponent needs positive N and J")
    if len({n for n, _ in pts}) < len(pts):
        raise ValueError("duplicate N values")
    if method == "two_point":
        (n1, j1), (n2, j2) = pts[-2:]
        return -math.log(j2 / j1) / math.log(n2 / n1)
    if method == "lstsq":
        x = np.log([n for n, _ in pts])
        y = np.log([j for _, j in pts])
        slope = np.polyfit(x, y, 1)[0]
        return float(-slope)
    raise ValueError(f"unknown method {method!r}")


def pinning_sweep(config: NessConfig, nu_values: Sequence[float],
                  workers: int = 1) -> list[tuple[float, NessResult]]:
    """``run_ness`` at each pinning strength, sharing seeds; sorted by nu."""
    if any(v < 0 for v in nu_values):
        raise ValueError("pinning strengths must be >= 0")
    configs = [replace(config, chain=replace(config.chain, nu=float(v)))
               for v in sorted(nu_values)]
    return [(c.chain.nu, r) for c, r in zip(configs, run_many(configs, workers))]


def run_many(configs: Sequence[NessConfig], workers: int = 1) -> list[NessResult]:
    """Several NESS experiments with all their runs scheduled on one pool."""
    t0 = time.perf_counter()
    jobs = [(c, k) for c in configs for k in range(c.n_runs)]
    flat = run_jobs(jobs, workers)
    out, pos = [], 0
    for c in configs:
        runs = flat[pos : pos + c.n_runs]
        pos += c.n_runs
        out.append(_reduce(c, runs, [[c.master_seed, k] for k in range(c.n_runs)]))
    for r in out:
        r.metadata["wall_clock_s"] = time.perf_counter() - t0
    return out
