"""Velocity Verlet and Langevin-thermostatted time stepping.

The thermostatted step is the symmetric splitting

    OU(dt/2) -> velocity Verlet(dt) -> OU(dt/2)

where OU is the exact Ornstein-Uhlenbeck flow of a bath site's momentum,
``p <- p exp(-mu h) + sqrt(T (1 - exp(-2 mu h))) xi``.  Only the bath sites
feel the OU part.  Each step consumes two Gaussian deviates per bath, drawn
in step order, so a trajectory depends only on the seed and not on how it was
chunked into calls.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numba
import numpy as np

from .model import BlowUpError, ChainSpec, State, Workspace, _compute_forces

CHUNK_STEPS = 1 << 15
RNG_NAME = f"numpy.random.PCG64/SeedSequence standard_normal (numpy {np.__version__})"


class Scheme(enum.Enum):
    DETERMINISTIC = "deterministic"
    LANGEVIN = "langevin"


@dataclass(frozen=True)
class BathSpec:
    """Two Langevin reservoirs.  ``right_site=None`` attaches a single bath."""

    mu: float
    t_left: float
    t_right: float
    left_site: int
    right_site: Optional[int]

    def __post_init__(self):
        if not self.mu >= 0:
            raise ValueError("bath coupling mu must be >= 0")
        if not (self.t_left > 0 and self.t_right > 0):
            raise ValueError("bath temperatures must be > 0")
        if self.right_site is not None and self.right_site == self.left_site:
            raise ValueError("left and right bath sites must differ")

    @classmethod
    def for_fixed_chain(cls, spec: ChainSpec, mu: float, t_left: float, t_right: float):
        return cls(mu, t_left, t_right, 1, spec.n_dynamic)

    @property
    def sites(self) -> list[int]:
        return [self.left_site] if self.right_site is None else [self.left_site, self.right_site]

    @property
    def temperatures(self) -> list[float]:
        return [self.t_left] if self.right_site is None else [self.t_left, self.t_right]

    def validate(self, spec: ChainSpec) -> None:
        sl = spec.dynamic_slice
        for s in self.sites:
            if not sl.start <= s < sl.stop:
                raise ValueError(f"bath site {s} is not a dynamical site")


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    seed: int = 0
    scheme: Scheme = Scheme.DETERMINISTIC

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        object.__setattr__(self, "scheme", Scheme(self.scheme))


class RngStream:
    """Seedable stream of standard Gaussian deviates.

    A stream is identified by ``(seed, run_index)``; different run indices give
    statistically independent streams through :class:`numpy.random.SeedSequence`
    spawn keys, so a sweep is reproducible regardless of scheduling order.
    """

    name = RNG_NAME

    def __init__(self, seed: int, run_index: int | None = None):
        self.seed = int(seed)
        self.run_index = run_index
        key = () if run_index is None else (int(run_index),)
        ss = np.random.SeedSequence(self.seed, spawn_key=key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def normals(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)


# --- kernels -----------------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _kick(p, f, h, lo, hi):
    ps = p[lo:hi]
    fs = f[lo:hi]
    for i in range(hi - lo):
        ps[i] += h * fs[i]


@numba.njit(cache=True, inline="always")
def _drift(q, p, dt, lo, hi):
    qs = q[lo:hi]
    ps = p[lo:hi]
    for i in range(hi - lo):
        qs[i] += dt * ps[i]


@numba.njit(cache=True)
def _verlet(q, p, f, dvp, xw, iw, a, b, nu2, z, bc, lo, hi, dt, n):
    h = 0.5 * dt
    for _ in range(n):
        _kick(p, f, h, lo, hi)
        _drift(q, p, dt, lo, hi)
        _compute_forces(q, f, dvp, xw, iw, a, b, nu2, z, bc, lo, hi)
        _kick(p, f, h, lo, hi)


@numba.njit(cache=True)
def _langevin(q, p, f, dvp, xw, iw, a, b, nu2, z, bc, lo, hi, dt, sites, decay, kick,
              noise, n):
    h = 0.5 * dt
    nb = sites.shape[0]
    for s in range(n):
        for k in range(nb):
            i = sites[k]
            p[i] = p[i] * decay[k] + kick[k] * noise[s, k]
        _kick(p, f, h, lo, hi)
        _drift(q, p, dt, lo, hi)
        _compute_forces(q, f, dvp, xw, iw, a, b, nu2, z, bc, lo, hi)
        _kick(p, f, h, lo, hi)
        for k in range(nb):
            i = sites[k]
            p[i] = p[i] * decay[k] + kick[k] * noise[s, nb + k]


def ou_coefficients(baths: BathSpec, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Decay factor and noise amplitude of a half-step (dt/2) OU update."""
    decay = math.exp(-baths.mu * 0.5 * dt)
    temps = np.asarray(baths.temperatures, dtype=np.float64)
    kick = np.sqrt(temps * (-math.expm1(-baths.mu * dt)))
    return np.full(len(temps), decay), kick


class _Engine:
    """Owns the force cache for one trajectory; advances it in place."""

    def __init__(self, state: State, spec: ChainSpec, dt: float,
                 baths: BathSpec | None = None, rng: RngStream | None = None):
        state.check(spec)
        self.state = state
        self.spec = spec
        self.dt = float(dt)
        self.ws = Workspace(spec)
        self.ws.update(state.q)
        self.thermostat = baths is not None and baths.mu > 0
        if baths is not None:
            baths.validate(spec)
        if self.thermostat:
            if rng is None:
                raise ValueError("a Langevin step needs an RngStream")
            self.rng = rng
            self.sites = np.asarray(baths.sites, dtype=np.int64)
            self.decay, self.kick = ou_coefficients(baths, dt)

    def advance(self, n: int) -> None:
        st = self.state
        done = 0
        while done < n:
            c = min(CHUNK_STEPS, n - done)
            if self.thermostat:
                noise = self.rng.normals((c, 2 * len(self.sites)))
                _langevin(st.q, st.p, *self.ws.bufs, *self.ws.params, self.dt,
                          self.sites, self.decay, self.kick, noise, c)
            else:
                _verlet(st.q, st.p, *self.ws.bufs, *self.ws.params, self.dt, c)
            done += c
        st.t += n * self.dt


def _check_finite(state: State, step: int) -> None:
    if not (np.isfinite(state.q).all() and np.isfinite(state.p).all()):
        raise BlowUpError(f"non-finite coordinates at step {step}", step=step)


def deterministic_step(state: State, spec: ChainSpec, dt: float) -> State:
    """One velocity Verlet step; returns a new state."""
    out = state.copy()
    _Engine(out, spec, dt).advance(1)
    _check_finite(out, 1)
    return out


def langevin_step(state: State, spec: ChainSpec, baths: BathSpec, dt: float,
                  rng: RngStream) -> State:
    """One OU/Verlet/OU step; returns a new state."""
    out = state.copy()
    _Engine(out, spec, dt, baths, rng).advance(1)
    _check_finite(out, 1)
    return out


def evolve(
    state: State,
    spec: ChainSpec,
    config: StepperConfig,
    n_steps: int,
    baths: BathSpec | None = None,
    observer: Callable[[int, State], None] | None = None,
    stride: int | None = None,
    rng: RngStream | None = None,
) -> State:
    """Advance ``n_steps`` steps with the configured scheme.

    ``observer(step, state)`` is called after every ``stride`` steps (and not at
    step 0).  The state passed in is live and must not be mutated.  Finiteness
    is checked at the same stride.  ``stride`` defaults to 1 with an observer
    and to ``CHUNK_STEPS`` without one.  Pass ``rng`` to continue an existing noise
    stream; otherwise one is created from ``config.seed``.

    Raises:
        BlowUpError: with the index of the first stride block found non-finite.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if stride is None:
        stride = 1 if observer is not None else CHUNK_STEPS
    if stride < 1:
        raise ValueError("stride must be >= 1")
    out = state.copy()
    if config.scheme == Scheme.LANGEVIN:
        if baths is None:
            raise ValueError("Langevin scheme needs a BathSpec")
        rng = rng if rng is not None else RngStream(config.seed)
    else:
        baths = None
    engine = _Engine(out, spec, config.dt, baths, rng)
    done = 0
    while done < n_steps:
        c = min(stride, n_steps - done)
        engine.advance(c)
        done += c
        _check_finite(out, done)
        if observer is not None and c == stride:
            observer(done, out)
    return out
