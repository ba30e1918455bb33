"""Isolated periodic rings: persistence of the total heat current."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import periodogram

from .integrator import _Engine
from .model import (
    BlowUpError,
    Boundary,
    ChainSpec,
    State,
    _sampled_current,
    center_of_mass_invariant,
    total_energy,
)

# Default excitation: two displaced sites around a moving one (labels 0, 1, 2).
DEFAULT_INITIAL_Q = ((0, -1.0), (2, 1.0))
DEFAULT_INITIAL_P = ((1, 1.0),)


@dataclass(frozen=True)
class RingConfig:
    """Isolated ring run.

    ``sample_stride`` is in steps.  ``envelope_window`` is in time units and
    defaults to 100 pinning periods ``2 pi / nu``.
    """

    chain: ChainSpec
    dt: float = 1e-4
    t_final: float = 8000.0
    sample_stride: int = 500
    initial_q: tuple = DEFAULT_INITIAL_Q
    initial_p: tuple = DEFAULT_INITIAL_P
    envelope_window: float | None = None
    invariant_every: int = 1000

    def __post_init__(self):
        if self.chain.boundary != Boundary.PERIODIC:
            raise ValueError("ring runs need a PERIODIC chain")
        if not self.t_final > 0 or not self.dt > 0:
            raise ValueError("t_final and dt must be > 0")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")
        m = self.chain.total_sites
        for site, _ in (*self.initial_q, *self.initial_p):
            if not 0 <= site < m:
                raise ValueError(f"initial condition site {site} outside 0..{m - 1}")
        if self.envelope_window is not None and not self.envelope_window > 0:
            raise ValueError("envelope_window must be > 0")

    @property
    def window_time(self) -> float:
        if self.envelope_window is not None:
            return self.envelope_window
        if self.chain.nu == 0:
            raise ValueError("default envelope window needs nu > 0")
        return 100 * 2 * math.pi / self.chain.nu

    @property
    def sample_dt(self) -> float:
        return self.dt * self.sample_stride

    @property
    def n_samples(self) -> int:
        return int(math.floor(self.t_final / self.sample_dt + 1e-9)) + 1

    def initial_state(self) -> State:
        st = State.zeros(self.chain)
        for site, v in self.initial_q:
            st.q[site] = v
        for site, v in self.initial_p:
            st.p[site] = v
        return st


@dataclass
class RingSeries:
    times: np.ndarray
    current: np.ndarray
    window_centers: np.ndarray
    env_max: np.ndarray
    env_min: np.ndarray
    omega: float
    peak_power: float
    energy_drift: float
    hc_drift: float
    metadata: dict = field(default_factory=dict)

    def persistence_ratio(self) -> float:
        return persistence_ratio(self.window_centers, self.env_max, self.env_min,
                                 float(self.times[-1]))


def run_ring(config: RingConfig) -> RingSeries:
    """Evolve the isolated ring and sample the total current.

    Also tracks the relative drift of ``H`` and ``h_c`` every
    ``invariant_every`` samples.

    Raises:
        BlowUpError: when the trajectory goes non-finite.
    """
    spec = config.chain
    state = config.initial_state()
    eng = _Engine(state, spec, config.dt)
    n = config.n_samples
    cur = np.empty(n)
    nb = spec.n_bonds
    cur[0] = _sampled_current(state.p, eng.ws.dvp, nb)
    h0 = total_energy(state, spec)
    c0 = center_of_mass_invariant(state, spec)
    e_drift = c_drift = 0.0

    def check(i):
        nonlocal e_drift, c_drift
        if not (np.isfinite(state.q).all() and np.isfinite(state.p).all()):
            raise BlowUpError(f"ring blew up near sample {i}", i * config.sample_stride)
        e_drift = max(e_drift, abs(total_energy(state, spec) - h0) / max(1.0, abs(h0)))
        c_drift = max(c_drift, abs(center_of_mass_invariant(state, spec) - c0)
                      / max(1.0, abs(c0)))

    for i in range(1, n):
        eng.advance(config.sample_stride)
        cur[i] = _sampled_current(state.p, eng.ws.dvp, nb)
        if i % config.invariant_every == 0:
            check(i)
    check(n - 1)
    times = np.arange(n) * config.sample_dt
    window = max(3, int(round(config.window_time / config.sample_dt)))
    centers, emax, emin = envelope(times, cur, window)
    if np.any(cur != 0):
        omega, power = dominant_frequency(cur, config.sample_dt)
    else:
        omega, power = float("nan"), 0.0
    return RingSeries(
        times=times,
        current=cur,
        window_centers=centers,
        env_max=emax,
        env_min=emin,
        omega=omega,
        peak_power=power,
        energy_drift=e_drift,
        hc_drift=c_drift,
        metadata={
            "dt": config.dt,
            "scheme": "deterministic",
            "steps": (n - 1) * config.sample_stride,
            "sample_stride": config.sample_stride,
            "envelope_window_samples": window,
            "frequency_convention": "angular; compare omega with nu",
        },
    )


def envelope(times: np.ndarray, x: np.ndarray, window: int):
    """Mean of strict local maxima and minima in consecutive windows.

    Only complete windows of ``window`` samples are used.  A window without any
    strict extremum of a kind reports NaN for it.

    Returns:
        (window center times, mean maxima, mean minima)
    """
    if window < 3:
        raise ValueError("envelope window must cover at least 3 samples")
    x = np.asarray(x, dtype=float)
    times = np.asarray(times, dtype=float)
    is_max = np.zeros(len(x), dtype=bool)
    is_min = np.zeros(len(x), dtype=bool)
    is_max[1:-1] = (x[1:-1] > x[:-2]) & (x[1:-1] > x[2:])
    is_min[1:-1] = (x[1:-1] < x[:-2]) & (x[1:-1] < x[2:])
    n_win = len(x) // window
    centers = np.empty(n_win)
    emax = np.full(n_win, np.nan)
    emin = np.full(n_win, np.nan)
    for w in range(n_win):
        sl = slice(w * window, (w + 1) * window)
        centers[w] = 0.5 * (times[sl.start] + times[sl.stop - 1])
        xs = x[sl]
        if is_max[sl].any():
            emax[w] = xs[is_max[sl]].mean()
        if is_min[sl].any():
            emin[w] = xs[is_min[sl]].mean()
    return centers, emax, emin


def _amplitude(emax: np.ndarray, emin: np.ndarray) -> np.ndarray:
    return 0.5 * (np.abs(emax) + np.abs(emin))


def persistence_ratio(centers: Sequence[float], emax: Sequence[float],
                      emin: Sequence[float], t_end: float) -> float:
    """Mean envelope magnitude over the last tenth of the run over the first tenth.

    When no window center falls inside a tenth, the nearest window stands in.
    """
    centers = np.asarray(centers)
    amp = _amplitude(np.asarray(emax), np.asarray(emin))
    ok = np.isfinite(amp)
    centers, amp = centers[ok], amp[ok]
    if len(amp) < 2:
        raise ValueError("need at least two envelope windows")
    first = centers <= 0.1 * t_end
    last = centers >= 0.9 * t_end
    a0 = amp[first].mean() if first.any() else amp[0]
    a1 = amp[last].mean() if last.any() else amp[-1]
    return float(a1 / a0)


def dominant_frequency(x: np.ndarray, sample_dt: float) -> tuple[float, float]:
    """Angular frequency of the tallest non-zero periodogram peak.

    The series is mean-subtracted and Hann-tapered; the peak is refined by a
    parabola through the log power of the three bins around the maximum.

    Returns:
        (omega, peak power)
    """
    x = np.asarray(x, dtype=float)
    if len(x) < 8:
        raise ValueError("series too short for a spectrum")
    if not np.any(x != x[0]):
        raise ValueError("constant series has no dominant frequency")
    freqs, power = periodogram(x, fs=1.0 / sample_dt, window="hann", detrend="constant")
    k = int(np.argmax(power[1:])) + 1
    shift = 0.0
    if 1 < k < len(power) - 1 and np.all(power[k - 1 : k + 2] > 0):
        lm, l0, lp = np.log(power[k - 1 : k + 2])
        denom = lm - 2 * l0 + lp
        if denom < 0:
            shift = 0.5 * (lm - lp) / denom
    df = freqs[1] - freqs[0]
    return float(2 * math.pi * (freqs[k] + shift * df)), float(power[k])
