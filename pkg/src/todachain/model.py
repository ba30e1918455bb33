"""Toda chain with on-site pinning: potentials, forces, energies and currents.

Sites are labelled ``0..M-1`` where ``M`` is the total number of lattice sites.
Bond ``j`` joins site ``j`` to site ``j + 1`` and carries the stretch
``r_j = q[j+1] - q[j]``.  Which bonds exist depends on the boundary:

* ``FIXED``: ``M = N + 2``; sites ``0`` and ``N + 1`` are frozen walls and the
  dynamical sites are ``1..N``.  Bonds ``0..N`` exist (both walls interact).
* ``PERIODIC``: every site is dynamical; bond ``M - 1`` wraps around with
  stretch ``q[0] - q[M-1]``.
* ``OPEN``: every site is dynamical; bonds ``0..M-2``.

Masses and the Boltzmann constant are 1 throughout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numba
import numpy as np


class Boundary(enum.IntEnum):
    FIXED = 0
    PERIODIC = 1
    OPEN = 2

    @classmethod
    def parse(cls, value: "str | int | Boundary") -> "Boundary":
        if isinstance(value, str):
            try:
                return cls[value.strip().upper()]
            except KeyError:
                raise ValueError(f"unknown boundary {value!r}") from None
        return cls(value)


class BlowUpError(RuntimeError):
    """Raised when a trajectory develops non-finite coordinates."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class ChainSpec:
    """Static description of a pinned Toda chain.

    Args:
        n_dynamic: Number of dynamical sites.  For a fixed chain this is the
            ``N`` of the lattice ``0..N+1``; for periodic and open chains every
            site is dynamical so it equals the total site count.
        boundary: Boundary type.
        a: Interaction amplitude of ``V(r) = (a/b) exp(-b r)``.
        b: Inverse interaction range.
        nu: Pinning strength.
        z: Pinning power, even and at least 2.
    """

    n_dynamic: int
    boundary: Boundary = Boundary.FIXED
    a: float = 1.0
    b: float = 1.0
    nu: float = 1.0
    z: int = 2

    def __post_init__(self):
        object.__setattr__(self, "boundary", Boundary.parse(self.boundary))
        if int(self.n_dynamic) != self.n_dynamic or self.n_dynamic < 1:
            raise ValueError(f"n_dynamic must be a positive integer, got {self.n_dynamic}")
        object.__setattr__(self, "n_dynamic", int(self.n_dynamic))
        if not (self.a > 0 and self.b > 0):
            raise ValueError("Toda parameters require a > 0 and b > 0")
        if int(self.z) != self.z or self.z < 2 or int(self.z) % 2:
            raise ValueError(f"pinning power z must be an even integer >= 2, got {self.z}")
        object.__setattr__(self, "z", int(self.z))
        if not self.nu >= 0:
            raise ValueError(f"pinning strength nu must be >= 0, got {self.nu}")

    @classmethod
    def with_total_sites(cls, total_sites: int, boundary, **kwargs) -> "ChainSpec":
        """Build a spec from the total lattice size instead of the dynamical count."""
        boundary = Boundary.parse(boundary)
        n = total_sites - 2 if boundary == Boundary.FIXED else total_sites
        return cls(n, boundary, **kwargs)

    @property
    def total_sites(self) -> int:
        return self.n_dynamic + 2 if self.boundary == Boundary.FIXED else self.n_dynamic

    @property
    def n_bonds(self) -> int:
        m = self.total_sites
        return m if self.boundary == Boundary.PERIODIC else m - 1

    @property
    def dynamic_slice(self) -> slice:
        if self.boundary == Boundary.FIXED:
            return slice(1, self.n_dynamic + 1)
        return slice(0, self.total_sites)

    def params(self) -> tuple:
        """Flat parameter tuple consumed by the compiled kernels."""
        sl = self.dynamic_slice
        return (
            float(self.a),
            float(self.b),
            float(self.nu) ** 2,
            self.z,
            int(self.boundary),
            sl.start,
            sl.stop,
        )


@dataclass
class State:
    """Dynamical snapshot: displacements, momenta and elapsed time."""

    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.q = np.ascontiguousarray(self.q, dtype=np.float64)
        self.p = np.ascontiguousarray(self.p, dtype=np.float64)
        if self.q.shape != self.p.shape or self.q.ndim != 1:
            raise ValueError("q and p must be 1-d arrays of equal length")

    @classmethod
    def zeros(cls, spec: ChainSpec) -> "State":
        m = spec.total_sites
        return cls(np.zeros(m), np.zeros(m), 0.0)

    def copy(self) -> "State":
        return State(self.q.copy(), self.p.copy(), self.t)

    def check(self, spec: ChainSpec) -> None:
        if self.q.shape[0] != spec.total_sites:
            raise ValueError(
                f"state has {self.q.shape[0]} sites, spec expects {spec.total_sites}"
            )


# --- scalar potentials -------------------------------------------------------

def toda_potential(r, spec: ChainSpec):
    """Toda bond energy ``(a/b) exp(-b r)``; ``+inf`` once the exponent overflows."""
    with np.errstate(over="ignore"):
        return (spec.a / spec.b) * np.exp(-spec.b * np.asarray(r, dtype=np.float64))


def toda_potential_derivative(r, spec: ChainSpec):
    """``dV/dr = -a exp(-b r)``; ``-inf`` on overflow."""
    with np.errstate(over="ignore"):
        return -spec.a * np.exp(-spec.b * np.asarray(r, dtype=np.float64))


def pinning_energy(q, spec: ChainSpec):
    return spec.nu**2 / spec.z * np.asarray(q, dtype=np.float64) ** spec.z


def pinning_force(q, spec: ChainSpec):
    return -(spec.nu**2) * np.asarray(q, dtype=np.float64) ** (spec.z - 1)


# --- compiled kernels --------------------------------------------------------

_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_LOG2E = 1.4426950408889634
_EXP_HI = 709.78
_EXP_LO = -708.0


@numba.njit(cache=True)
def _vexp(x, out, ibuf, n):
    """``out[:n] = exp(x[:n])`` in a form LLVM can vectorise.

    Cody-Waite reduction to ``|r| <= ln2/2`` and a degree-12 Horner polynomial;
    relative error below 1e-15.  Overflow gives ``+inf``.
    """
    xs = x[:n]
    os = out[:n]
    ks = ibuf[:n]
    scale = ks.view(np.float64)
    for j in range(n):
        ks[j] = np.int64(math.floor(min(max(xs[j], _EXP_LO), 709.0) * _LOG2E + 0.5))
    for j in range(n):
        xj = min(max(xs[j], _EXP_LO), 709.0)
        k = float(ks[j])
        r = (xj - k * _LN2_HI) - k * _LN2_LO
        p = 1.0 + r * (1.0 + r * (0.5 + r * (1.0 / 6 + r * (1.0 / 24 + r * (
            1.0 / 120 + r * (1.0 / 720 + r * (1.0 / 5040 + r * (1.0 / 40320 + r * (
                1.0 / 362880 + r * (1.0 / 3628800 + r * (
                    1.0 / 39916800 + r * (1.0 / 479001600))))))))))))
        os[j] = p if xs[j] < _EXP_HI else np.inf
    for j in range(n):
        ks[j] = (ks[j] + 1023) << 52
    for j in range(n):
        os[j] *= scale[j]


@numba.njit(cache=True)
def _compute_forces(q, f, dvp, xw, iw, a, b, nu2, z, bc, lo, hi):
    """Fill ``f`` with site forces and the padded array ``dvp`` with ``V'``.

    ``dvp[j + 1] = V'(r_j)`` for bond ``j``; ``dvp[0]`` is the bond to the left
    of site 0 (the wrap bond on a ring, zero otherwise) and ``dvp[m]`` the bond
    to the right of site ``m - 1``.  With this padding the force on site ``i``
    is ``dvp[i + 1] - dvp[i]`` minus the pinning term, without branches.
    """
    m = q.shape[0]
    ql = q[: m - 1]
    qr = q[1:]
    for j in range(m - 1):
        xw[j] = b * (ql[j] - qr[j])
    nb = m - 1
    if bc == 1:
        xw[m - 1] = b * (q[m - 1] - q[0])
        nb = m
    d = dvp[1 : nb + 1]
    _vexp(xw, d, iw, nb)
    for j in range(nb):
        d[j] *= -a
    if bc == 1:
        dvp[0] = dvp[m]
    else:
        dvp[0] = 0.0
        dvp[m] = 0.0
    f[:lo] = 0.0
    f[hi:] = 0.0
    fs = f[lo:hi]
    qs = q[lo:hi]
    dr = dvp[lo + 1 : hi + 1]
    dl = dvp[lo:hi]
    if z == 2:
        for i in range(hi - lo):
            fs[i] = dr[i] - dl[i] - nu2 * qs[i]
    elif z == 4:
        for i in range(hi - lo):
            fs[i] = dr[i] - dl[i] - nu2 * (qs[i] * qs[i] * qs[i])
    else:
        for i in range(hi - lo):
            fs[i] = dr[i] - dl[i] - nu2 * qs[i] ** (z - 1)


class Workspace:
    """Scratch buffers for the force kernel of one chain."""

    def __init__(self, spec: ChainSpec):
        m = spec.total_sites
        self.f = np.zeros(m)
        self.dvp = np.zeros(m + 1)
        self.xw = np.zeros(m + 1)
        self.iw = np.zeros(m + 1, dtype=np.int64)
        self.params = spec.params()
        self.n_bonds = spec.n_bonds

    def update(self, q: np.ndarray) -> None:
        _compute_forces(q, self.f, self.dvp, self.xw, self.iw, *self.params)

    @property
    def bufs(self) -> tuple:
        return (self.f, self.dvp, self.xw, self.iw)

    @property
    def dv(self) -> np.ndarray:
        return self.dvp[1 : self.n_bonds + 1]


def forces(state: State, spec: ChainSpec) -> np.ndarray:
    """Force on every site; frozen wall sites get exactly zero."""
    state.check(spec)
    ws = Workspace(spec)
    ws.update(state.q)
    return ws.f.copy()


def bond_stretches(q: np.ndarray, spec: ChainSpec) -> np.ndarray:
    r = np.diff(q)
    if spec.boundary == Boundary.PERIODIC:
        r = np.append(r, q[0] - q[-1])
    return r


def _right_neighbour_momenta(p: np.ndarray, spec: ChainSpec) -> np.ndarray:
    if spec.boundary == Boundary.PERIODIC:
        return np.roll(p, -1)
    return p[1:]


def total_energy(state: State, spec: ChainSpec) -> float:
    """Hamiltonian: kinetic plus pinning plus bond energies.

    Frozen wall sites are included; their terms vanish identically.
    """
    state.check(spec)
    q, p = state.q, state.p
    kinetic = 0.5 * np.dot(p, p)
    pin = float(np.sum(pinning_energy(q, spec)))
    bonds = float(np.sum(toda_potential(bond_stretches(q, spec), spec)))
    return kinetic + pin + bonds


def center_of_mass_invariant(state: State, spec: ChainSpec) -> float:
    """``h_c = (sum p)^2 / 2 + nu^2 (sum q)^2 / 2``; undefined for fixed chains."""
    if spec.boundary == Boundary.FIXED:
        raise ValueError("h_c is only conserved for periodic or open chains")
    state.check(spec)
    return 0.5 * state.p.sum() ** 2 + 0.5 * spec.nu**2 * state.q.sum() ** 2


def local_currents(state: State, spec: ChainSpec) -> np.ndarray:
    """Heat current ``-(p_j + p_{j+1}) V'(r_j) / 2`` on every bond."""
    state.check(spec)
    dv = toda_potential_derivative(bond_stretches(state.q, spec), spec)
    p = state.p
    pr = _right_neighbour_momenta(p, spec)
    return -0.5 * (p[: len(dv)] + pr) * dv


def local_current(state: State, spec: ChainSpec, j: int) -> float:
    if not 0 <= j < spec.n_bonds:
        raise IndexError(f"bond {j} does not exist for a {spec.boundary.name} chain")
    m = spec.total_sites
    k = (j + 1) % m
    dv = toda_potential_derivative(state.q[k] - state.q[j], spec)
    return float(-0.5 * (state.p[j] + state.p[k]) * dv)


def total_current(state: State, spec: ChainSpec) -> float:
    return float(np.sum(local_currents(state, spec)))


@numba.njit(cache=True)
def _sampled_current(p, dvp, nb):
    """Total current from momenta and the padded ``V'`` array of the force kernel."""
    m = p.shape[0]
    s = 0.0
    for j in range(nb):
        k = j + 1 if j + 1 < m else 0
        s -= 0.5 * (p[j] + p[k]) * dvp[j + 1]
    return s
