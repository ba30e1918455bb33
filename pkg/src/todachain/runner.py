"""Experiment orchestration: dispatch, output files and the manifest."""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .integrator import RNG_NAME, RngStream
from .model import BlowUpError, State
from .ness import NessResult, estimator_agreement, run_many, scaling_exponent
from .output import MANIFEST_NAME, utc_now, write_csv, write_json, write_manifest
from .poincare import (
    Detection,
    EmptySliceError,
    NoEventsError,
    SectionConfig,
    auto_slice,
    box_count_dimension,
    random_initial_state,
    run_sections,
)
from .ring import run_ring

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_BLOWUP = 2
EXIT_IO = 3


@dataclass
class RunOutcome:
    exit_code: int
    files: list = field(default_factory=list)
    manifest: Path | None = None
    error: str | None = None


def _chain_meta(spec) -> dict:
    return {"boundary": spec.boundary.name.lower(), "total_sites": spec.total_sites,
            "n_dynamic": spec.n_dynamic, "a": spec.a, "b": spec.b, "nu": spec.nu, "z": spec.z}


def _header(cfg: ExperimentConfig, spec, dt: float, extra: dict) -> dict:
    h = {"kind": cfg.kind, "master_seed": cfg.master_seed, "dt": dt, "chain": _chain_meta(spec),
         "rng": RNG_NAME, "software": f"todachain {__version__}"}
    h.update(extra)
    return h


# --- NESS and sweeps ---------------------------------------------------------


def _profile_rows(res: NessResult):
    n = res.n
    for i in range(n):
        jb = res.current_profile[i] if i < n - 1 else None
        je = res.current_err[i] if i < n - 1 else None
        yield (i + 1, (i + 1) / n, res.temp_profile[i], res.temp_err[i], jb, je)


PROFILE_COLUMNS = ("site_index", "x", "T_j", "T_j_stderr", "J_bond", "J_bond_stderr")
CURRENT_COLUMNS = ("N", "nu", "z", "J_bulk", "J_left", "J_right",
                   "J_bulk_stderr", "J_left_stderr", "J_right_stderr")


def _current_row(r: NessResult):
    return (r.n, r.nu, r.z, r.j_bulk, r.j_left, r.j_right,
            r.j_bulk_err, r.j_left_err, r.j_right_err)


def _ness_meta(cfg: ExperimentConfig, r: NessResult) -> dict:
    return {k: v for k, v in r.metadata.items() if k != "wall_clock_s"}


def sweep(cfg: ExperimentConfig, workers: int = 1) -> list[NessResult]:
    """All (nu, N) NESS experiments of a sweep, ordered by nu then N.

    Every experiment uses the run streams ``(master_seed, k)``; results do not
    depend on the worker count.
    """
    if cfg.kind == "ness":
        configs = [cfg.ness()]
    else:
        ns = sorted(cfg.values["sweep"]["n_dynamic_values"])
        nus = cfg.values["sweep"]["nu_values"] or (cfg.values["chain"]["nu"],)
        configs = []
        for nu in sorted(nus):
            for n in ns:
                c = cfg.ness(n)
                configs.append(replace(c, chain=replace(c.chain, nu=float(nu))))
    return run_many(configs, workers)


def _scaling_summary(results: list[NessResult]) -> list[dict]:
    out = []
    for nu in sorted({r.nu for r in results}):
        rs = sorted((r for r in results if r.nu == nu), key=lambda r: r.n)
        entry = {"nu": nu, "N": [r.n for r in rs], "J_bulk": [r.j_bulk for r in rs]}
        pts = [(r.n, r.j_bulk) for r in rs]
        if len(rs) >= 2 and all(j > 0 for _, j in pts):
            entry["alpha_two_point"] = scaling_exponent(pts, "two_point")
            entry["alpha_lstsq"] = scaling_exponent(pts, "lstsq")
            entry[f"J({rs[-1].n})/J({rs[0].n})"] = rs[-1].j_bulk / rs[0].j_bulk
        out.append(entry)
    return out


def _agreement(r: NessResult):
    try:
        return estimator_agreement(r)
    except ValueError:
        return None


def _run_ness_kind(cfg: ExperimentConfig, out: Path, workers: int):
    t0 = time.perf_counter()
    results = sweep(cfg, workers)
    wall = time.perf_counter() - t0
    files = []
    base = results[0]
    if cfg.kind == "ness":
        header = _header(cfg, cfg.chain(), base.metadata["dt"], _ness_meta(cfg, base))
        files.append(write_csv(out / "profile.csv", header, PROFILE_COLUMNS, _profile_rows(base)))
    else:
        for r in results:
            spec = cfg.chain(r.n)
            spec = replace(spec, nu=r.nu)
            header = _header(cfg, spec, r.metadata["dt"], _ness_meta(cfg, r))
            name = f"profile_N{r.n}_nu{r.nu:g}.csv"
            files.append(write_csv(out / name, header, PROFILE_COLUMNS, _profile_rows(r)))
    header = _header(cfg, cfg.chain(results[0].n), base.metadata["dt"], _ness_meta(cfg, base))
    header.pop("chain")
    header["chain_common"] = {k: v for k, v in _chain_meta(cfg.chain(results[0].n)).items()
                              if k in ("boundary", "a", "b", "z")}
    files.append(write_csv(out / "currents.csv", header, CURRENT_COLUMNS,
                           (_current_row(r) for r in results)))
    summary = {
        "kind": cfg.kind,
        "config": cfg.values,
        "seeds": results[0].seeds,
        "runs": [{"N": r.n, "nu": r.nu, "J_bulk": r.j_bulk, "J_left": r.j_left,
                  "J_right": r.j_right, "estimator_agreement": _agreement(r)} for r in results],
        "wall_clock_s": wall,
    }
    if cfg.kind == "sweep":
        summary["scaling"] = _scaling_summary(results)
    files.append(write_json(out / "summary.json", summary))
    return files, results[0].seeds


# --- ring ----------------------------------------------------------------------


def _run_ring_kind(cfg: ExperimentConfig, out: Path, workers: int):
    t0 = time.perf_counter()
    rc = cfg.ring()
    series = run_ring(rc)
    wall = time.perf_counter() - t0
    header = _header(cfg, rc.chain, rc.dt, dict(series.metadata, initial_q=rc.initial_q,
                                                initial_p=rc.initial_p))
    files = [
        write_csv(out / "ring.csv", header, ("t", "total_current"),
                  zip(series.times, series.current)),
        write_csv(out / "ring_envelope.csv", header, ("t_center", "env_max", "env_min"),
                  zip(series.window_centers, series.env_max, series.env_min)),
    ]
    try:
        ratio = series.persistence_ratio()
    except ValueError:
        ratio = None
    summary = {
        "kind": "ring",
        "config": cfg.values,
        "seeds": [],
        "omega": series.omega,
        "nu": rc.chain.nu,
        "peak_power": series.peak_power,
        "persistence_ratio": ratio,
        "energy_drift": series.energy_drift,
        "hc_drift": series.hc_drift,
        "wall_clock_s": wall,
    }
    files.append(write_json(out / "summary.json", summary))
    return files, []


# --- Poincare sections ---------------------------------------------------------


def section_configs(cfg: ExperimentConfig) -> list[tuple[list, SectionConfig]]:
    """(seed label, SectionConfig) for every initial condition of the experiment.

    An explicit ``initial`` gives a single trajectory; otherwise ``n_initial``
    random states are drawn, state ``k`` from the stream ``(master_seed, k)``.
    """
    p = cfg.values["poincare"]
    spec = cfg.chain()
    kw = dict(dt=p["dt"], t_final=p["t_final"], delta=p["delta"], mode=Detection(p["mode"]))
    if p["initial"] is not None:
        x = np.asarray(p["initial"], dtype=float)
        return [(None, SectionConfig(spec, State(x[:3].copy(), x[3:].copy()), **kw))]
    out = []
    for k in range(p["n_initial"]):
        st = random_initial_state(p["energy_scale"], RngStream(cfg.master_seed, k), spec)
        out.append(([cfg.master_seed, k], SectionConfig(spec, st, **kw)))
    return out


def _section_job(sc: SectionConfig):
    return run_sections(sc)


def _run_poincare_kind(cfg: ExperimentConfig, out: Path, workers: int):
    p = cfg.values["poincare"]
    jobs = section_configs(cfg)
    t0 = time.perf_counter()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            events = list(pool.map(_section_job, [sc for _, sc in jobs]))
    else:
        events = [_section_job(sc) for _, sc in jobs]
    wall = time.perf_counter() - t0
    files, report = [], []
    for k, ((seed, sc), ev) in enumerate(zip(jobs, events)):
        sub = out / f"ic{k}"
        sub.mkdir(exist_ok=True)
        header = _header(cfg, sc.chain, sc.dt, dict(
            ev.metadata, seed=seed, initial=np.concatenate([sc.initial.q, sc.initial.p])))
        cols = ("t", "direction", "q0", "q1", "q2", "p0", "p1", "p2", "H", "h_c")
        rows = (
            (ev.t[i], int(ev.direction[i]), *ev.q[i], *ev.p[i], ev.energy[i], ev.hc[i])
            for i in range(len(ev))
        )
        files.append(write_csv(sub / "sections.csv", header, cols, rows))
        h0 = ev.metadata["H0"]
        entry = {"ic": k, "seed": seed, "n_events": len(ev),
                 "energy_drift": float(np.max(np.abs(ev.energy - h0)) / max(1.0, abs(h0))),
                 "slices": []}
        for j in range(3):
            for qv in p["slice_quantiles"]:
                pstar = float(np.quantile(ev.p[:, j], qv))
                s_entry = {"j": j, "quantile": qv, "pstar": pstar}
                try:
                    sl = auto_slice(ev, j, pstar, p["min_points"], p["slice_tol"],
                                    p["slice_max_tol"])
                except EmptySliceError:
                    s_entry.update(n_points=0, dimension=None)
                    entry["slices"].append(s_entry)
                    continue
                a, b = sl.free_indices
                name = f"slice_{j}_{pstar:.6f}.csv"
                files.append(write_csv(sub / name, dict(header, slice_j=j, pstar=pstar,
                                                        tol=sl.tol),
                                       (f"p{a}", f"p{b}"), sl.points))
                dim = None
                if len(sl.points) >= p["min_points"]:
                    try:
                        dim = box_count_dimension(sl.points, p["min_points"])
                    except ValueError:
                        dim = None
                s_entry.update(tol=sl.tol, n_points=len(sl.points), dimension=dim, file=name)
                entry["slices"].append(s_entry)
        report.append(entry)
    summary = {"kind": "poincare", "config": cfg.values,
               "seeds": [s for s, _ in jobs], "initial_conditions": report,
               "wall_clock_s": wall}
    files.append(write_json(out / "summary.json", summary))
    return files, [s for s, _ in jobs]


_DRIVERS = {
    "ness": _run_ness_kind,
    "sweep": _run_ness_kind,
    "ring": _run_ring_kind,
    "poincare": _run_poincare_kind,
}


def execute(cfg: ExperimentConfig, out_dir: str | os.PathLike | None = None,
            workers: int | None = None) -> tuple[list[Path], Path]:
    """Run the experiment and write its outputs; the manifest is written last.

    Raises:
        ValueError: invalid configuration.
        BlowUpError, NoEventsError: the simulation failed.
        OSError: outputs could not be written.
    """
    out_dir = out_dir if out_dir is not None else cfg.out
    if out_dir is None:
        raise ValueError("no output directory given")
    workers = cfg.workers if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stale = out / MANIFEST_NAME
    if stale.exists():
        stale.unlink()
    started = utc_now()
    files, seeds = _DRIVERS[cfg.kind](cfg, out, workers)
    info = {
        "kind": cfg.kind,
        "config": cfg.emit(),
        "master_seed": cfg.master_seed,
        "seeds": seeds,
        "software_version": __version__,
        "numpy_version": np.__version__,
        "rng": RNG_NAME,
        "workers": workers,
        "started": started,
        "finished": utc_now(),
    }
    return files, write_manifest(out, files, info)


def run(cfg: ExperimentConfig, out_dir: str | os.PathLike | None = None,
        workers: int | None = None) -> RunOutcome:
    """:func:`execute` with failures mapped to exit codes.

    0 success, 1 invalid configuration, 2 blow-up or no section events,
    3 input/output failure.
    """
    try:
        files, manifest = execute(cfg, out_dir, workers)
    except (BlowUpError, NoEventsError) as e:
        return RunOutcome(EXIT_BLOWUP, error=str(e))
    except OSError as e:
        return RunOutcome(EXIT_IO, error=str(e))
    except ValueError as e:
        return RunOutcome(EXIT_VALIDATION, error=str(e))
    return RunOutcome(EXIT_OK, files, manifest)
