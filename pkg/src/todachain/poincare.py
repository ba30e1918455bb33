"""Poincare sections of the pinned 3-body open Toda chain.

A section event is recorded whenever particle 0 returns to its initial
displacement, ``g(t) = q_0(t) - q_0(0) = 0``.  Fixing one of the three momenta
as well (a slice) leaves two free momenta.  With only H and h_c conserved the
sliced events would fill a 2-d region; a further invariant confines them to
curves, which the box-counting estimator distinguishes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.spatial import cKDTree

from .integrator import RngStream
from .model import (
    BlowUpError,
    Boundary,
    ChainSpec,
    State,
    center_of_mass_invariant,
    total_energy,
)

N_EVENT_COLS = 8  # step index, direction, q0..q2, p0..p2
_BUFFER = 1 << 16
NN_CUTOFF = 2.0


class Detection(enum.Enum):
    SIGN_CROSSING = "sign_crossing"
    TOLERANCE_WINDOW = "tolerance_window"


class NoEventsError(RuntimeError):
    """The trajectory never returned to the section."""


class EmptySliceError(ValueError):
    """No event lies within the slice tolerance."""


@dataclass(frozen=True)
class SectionConfig:
    chain: ChainSpec
    initial: State
    dt: float = 1e-4
    t_final: float = 1e5
    delta: float = 1e-3
    mode: Detection = Detection.SIGN_CROSSING

    def __post_init__(self):
        if self.chain.boundary != Boundary.OPEN or self.chain.total_sites != 3:
            raise ValueError("sections need a 3-site OPEN chain")
        if not self.delta > 0:
            raise ValueError("crossing tolerance delta must be > 0")
        if not (self.dt > 0 and self.t_final > 0):
            raise ValueError("dt and t_final must be > 0")
        self.initial.check(self.chain)
        object.__setattr__(self, "mode", Detection(self.mode))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass
class SectionEvents:
    """Columnar store of section events (one row per crossing)."""

    t: np.ndarray
    direction: np.ndarray
    q: np.ndarray
    p: np.ndarray
    energy: np.ndarray
    hc: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class SlicedSection:
    index: int
    value: float
    tol: float
    points: np.ndarray  # (n, 2): the two free momenta in index order

    @property
    def free_indices(self) -> tuple[int, int]:
        a, b = (k for k in range(3) if k != self.index)
        return a, b


@numba.njit(cache=True, inline="always")
def _pin(x, nu2, z):
    if z == 2:
        return nu2 * x
    if z == 4:
        return nu2 * x * x * x
    return nu2 * x ** (z - 1)


@numba.njit(cache=True)
def _scan(y, a, b, nu2, z, dt, n, step0, q0ref, mode, delta, out, mem):
    """Velocity Verlet for the 3-site open chain with section detection.

    ``y = [q0, q1, q2, p0, p1, p2]`` is advanced in place.  Event column 0 is
    the absolute (fractional) step index of the crossing.  ``mem`` carries
    detector memory between calls:
    ``[g_prev, window flag, best |g|, entry sign, best row (8 values)]`` where
    the window flag is 0 outside, 1 inside and 2 inside the starting passage.

    Returns ``(steps done, events written)``; stops early when ``out`` is full.
    """
    h = 0.5 * dt
    cap = out.shape[0]
    k = 0
    q0, q1, q2, p0, p1, p2 = y[0], y[1], y[2], y[3], y[4], y[5]
    d0 = -a * math.exp(-b * (q1 - q0))
    d1 = -a * math.exp(-b * (q2 - q1))
    f0 = d0 - _pin(q0, nu2, z)
    f1 = d1 - d0 - _pin(q1, nu2, z)
    f2 = -d1 - _pin(q2, nu2, z)
    g_prev = mem[0]
    for s in range(n):
        o0, o1, o2, r0, r1, r2 = q0, q1, q2, p0, p1, p2
        p0 += h * f0
        p1 += h * f1
        p2 += h * f2
        q0 += dt * p0
        q1 += dt * p1
        q2 += dt * p2
        d0 = -a * math.exp(-b * (q1 - q0))
        d1 = -a * math.exp(-b * (q2 - q1))
        f0 = d0 - _pin(q0, nu2, z)
        f1 = d1 - d0 - _pin(q1, nu2, z)
        f2 = -d1 - _pin(q2, nu2, z)
        p0 += h * f0
        p1 += h * f1
        p2 += h * f2
        g = q0 - q0ref
        if mode == 0:
            if (g_prev < 0.0 and g >= 0.0) or (g_prev > 0.0 and g <= 0.0):
                w = g_prev / (g_prev - g)
                out[k, 0] = step0 + s + w
                out[k, 1] = 1.0 if g > g_prev else -1.0
                out[k, 2] = o0 + w * (q0 - o0)
                out[k, 3] = o1 + w * (q1 - o1)
                out[k, 4] = o2 + w * (q2 - o2)
                out[k, 5] = r0 + w * (p0 - r0)
                out[k, 6] = r1 + w * (p1 - r1)
                out[k, 7] = r2 + w * (p2 - r2)
                k += 1
        else:
            ag = abs(g)
            if ag < delta:
                if mem[1] == 0.0:
                    mem[1] = 1.0
                    mem[2] = np.inf
                    mem[3] = 1.0 if g_prev > 0.0 else -1.0
                if mem[1] == 1.0 and ag < mem[2]:
                    mem[2] = ag
                    mem[4] = step0 + s + 1.0
                    mem[6] = q0
                    mem[7] = q1
                    mem[8] = q2
                    mem[9] = p0
                    mem[10] = p1
                    mem[11] = p2
            elif mem[1] == 2.0:
                mem[1] = 0.0
            elif mem[1] == 1.0:
                mem[1] = 0.0
                exit_sign = 1.0 if g > 0.0 else -1.0
                if exit_sign != mem[3]:
                    # only passages that straddle the section count
                    out[k, 0] = mem[4]
                    out[k, 1] = exit_sign
                    for i in range(6):
                        out[k, 2 + i] = mem[6 + i]
                    k += 1
        g_prev = g
        if k >= cap:
            n = s + 1
            break
    mem[0] = g_prev
    y[0], y[1], y[2], y[3], y[4], y[5] = q0, q1, q2, p0, p1, p2
    return n, k


def _energies(q: np.ndarray, p: np.ndarray, spec: ChainSpec) -> tuple[np.ndarray, np.ndarray]:
    r = np.diff(q, axis=1)
    h = (0.5 * (p**2).sum(1) + spec.nu**2 / spec.z * (q**spec.z).sum(1)
         + (spec.a / spec.b) * np.exp(-spec.b * r).sum(1))
    hc = 0.5 * p.sum(1) ** 2 + 0.5 * spec.nu**2 * q.sum(1) ** 2
    return h, hc


def run_sections(config: SectionConfig) -> SectionEvents:
    """Integrate without baths and collect every return of particle 0.

    In sign-crossing mode the state is linearly interpolated to ``g = 0``.  In
    tolerance-window mode each passage through ``|g| < delta`` that changes the
    sign of ``g`` yields the step closest to the section.

    Raises:
        NoEventsError: if nothing was recorded.
        BlowUpError: on non-finite coordinates.
    """
    spec = config.chain
    y = np.concatenate([config.initial.q, config.initial.p])
    q0ref = float(config.initial.q[0])
    mode = 0 if config.mode == Detection.SIGN_CROSSING else 1
    mem = np.zeros(12)
    mem[0] = y[0] - q0ref
    if abs(mem[0]) < config.delta:
        mem[1] = 2.0
    buf = np.empty((_BUFFER, N_EVENT_COLS))
    rows = []
    total = config.n_steps
    done = 0
    while done < total:
        c = min(total - done, 1 << 24)
        steps, k = _scan(y, float(spec.a), float(spec.b), float(spec.nu) ** 2, spec.z,
                         config.dt, c, done, q0ref, mode, config.delta, buf, mem)
        if k:
            ev = buf[:k].copy()
            ev[:, 0] *= config.dt
            rows.append(ev)
        done += steps
        if not np.isfinite(y).all():
            raise BlowUpError(f"section run blew up before step {done}", done)
    if not rows:
        raise NoEventsError(f"no returns to q_0 = {q0ref} within t = {config.t_final}")
    ev = np.concatenate(rows)
    q, p = ev[:, 2:5], ev[:, 5:8]
    h, hc = _energies(q, p, spec)
    return SectionEvents(
        t=ev[:, 0],
        direction=ev[:, 1].astype(np.int8),
        q=q,
        p=p,
        energy=h,
        hc=hc,
        metadata={
            "dt": config.dt,
            "t_final": config.t_final,
            "mode": config.mode.value,
            "delta": config.delta,
            "q0_ref": q0ref,
            "H0": total_energy(config.initial, spec),
            "hc0": center_of_mass_invariant(config.initial, spec),
        },
    )


def slice_events(events: SectionEvents, j: int, value: float, tol: float) -> SlicedSection:
    """Keep events with ``|p_j - value| <= tol``; return the other two momenta.

    Raises:
        EmptySliceError: when nothing falls inside the slice.
    """
    if len(events) == 0:
        raise ValueError("no events to slice")
    if j not in (0, 1, 2):
        raise ValueError("momentum index must be 0, 1 or 2")
    keep = np.abs(events.p[:, j] - value) <= tol
    if not keep.any():
        raise EmptySliceError(f"no events with |p_{j} - {value}| <= {tol}")
    free = [k for k in range(3) if k != j]
    return SlicedSection(j, float(value), float(tol), events.p[keep][:, free])


def densest_value(events: SectionEvents, j: int, tol: float = 0.01) -> float:
    """Centre of the most populated ``2 tol`` wide bin of ``p_j``."""
    x = events.p[:, j]
    lo, hi = x.min(), x.max()
    nbins = max(1, int(math.ceil((hi - lo) / (2 * tol))))
    counts, edges = np.histogram(x, bins=nbins, range=(lo, lo + nbins * 2 * tol))
    k = int(np.argmax(counts))
    return float(0.5 * (edges[k] + edges[k + 1]))


def auto_slice(events: SectionEvents, j: int, value: float, min_points: int = 500,
               tol: float = 0.01, max_tol: float = 0.1) -> SlicedSection:
    """Widen the slice tolerance by 2x until ``min_points`` are caught or ``max_tol``."""
    while True:
        try:
            sl = slice_events(events, j, value, tol)
        except EmptySliceError:
            sl = None
        if (sl is not None and len(sl.points) >= min_points) or tol >= max_tol:
            if sl is None:
                raise EmptySliceError(f"no events with |p_{j} - {value}| <= {tol}")
            return sl
        tol = min(2 * tol, max_tol)


def box_count_dimension(points: np.ndarray, min_points: int = 500,
                        return_counts: bool = False):
    """Box-counting slope of a planar point set.

    Box sizes are ``L / 2**k``, ``k = 1, 2, ...``, with ``L`` the larger side of
    the bounding box.  The finest size kept is the smallest one still at least
    twice the median nearest-neighbour spacing; below that boxes mostly hold
    single points and the count saturates.  At least three octaves are required.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("expected an (n, 2) array")
    if len(pts) < min_points:
        raise ValueError(f"need at least {min_points} points, got {len(pts)}")
    lo = pts.min(0)
    side = float((pts.max(0) - lo).max())
    if side == 0:
        raise ValueError("degenerate point set")
    nn = float(np.median(cKDTree(pts).query(pts, k=2)[0][:, 1]))
    if nn == 0:
        raise ValueError("duplicate points dominate the set")
    k_max = int(math.floor(math.log2(side / (NN_CUTOFF * nn))))
    if k_max < 4:
        raise ValueError("point set spans fewer than three octaves")
    ks = np.arange(1, k_max + 1)
    counts = []
    for k in ks:
        eps = side / 2.0**k
        idx = np.floor((pts - lo) / eps).astype(np.int64)
        idx = np.minimum(idx, 2**k - 1)
        counts.append(len(np.unique(idx[:, 0] * (2**k) + idx[:, 1])))
    x = ks * math.log(2.0) - math.log(side)
    slope = float(np.polyfit(x, np.log(counts), 1)[0])
    if return_counts:
        return slope, side / 2.0**ks, np.asarray(counts)
    return slope


def random_initial_state(energy_scale: float, rng: RngStream | np.random.Generator,
                         spec: ChainSpec | None = None) -> State:
    """3-body state with every q and p uniform in ``[-energy_scale, energy_scale]``."""
    if not energy_scale > 0:
        raise ValueError("energy_scale must be > 0")
    gen = rng._gen if isinstance(rng, RngStream) else rng
    x = gen.uniform(-energy_scale, energy_scale, 6)
    return State(x[:3], x[3:], 0.0)
