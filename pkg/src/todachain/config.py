"""Experiment configuration: an INI schema with defaults and validation.

Example (a minimal NESS run)::

    [chain]
    total_sites = 34

    [baths]
    t_left = 4
    t_right = 1

Sections are ``experiment``, ``chain``, ``baths``, ``ness``, ``sweep``,
``ring`` and ``poincare``; only the ones relevant to the experiment kind may
appear.  Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, replace
from typing import Any, Callable

from .integrator import BathSpec
from .model import Boundary, ChainSpec
from .ness import NessConfig
from .poincare import Detection
from .ring import RingConfig

KINDS = ("ness", "ring", "poincare", "sweep")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


# --- value codecs ------------------------------------------------------------


def _int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ValueError(f"expected an integer, got {s!r}")
    return int(v)


def _float(s: str) -> float:
    v = float(s)
    if math.isnan(v):
        raise ValueError("NaN is not allowed")
    return v


def _list(conv: Callable) -> Callable:
    def parse(s: str):
        items = [x for x in re.split(r"[,\s]+", s.strip()) if x]
        return tuple(conv(x) for x in items)

    return parse


def _pairs(s: str) -> tuple:
    out = []
    for item in re.split(r"[,\s]+", s.strip()):
        if not item:
            continue
        site, _, value = item.partition(":")
        if not _:
            raise ValueError(f"expected site:value, got {item!r}")
        out.append((_int(site), _float(value)))
    return tuple(out)


def _optional(conv: Callable) -> Callable:
    def parse(s: str):
        return None if s.strip().lower() in ("", "none", "auto") else conv(s)

    return parse


def _choice(*options: str) -> Callable:
    def parse(s: str) -> str:
        v = s.strip().lower()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return v

    return parse


def _fmt(v: Any) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join(f"{s}:{x!r}" for s, x in v)
        return ", ".join(_fmt(x) for x in v)
    return str(v)


# section -> key -> (parser, default).  A default of ``...`` means "depends on
# the experiment kind" and is resolved in ``_kind_defaults``.
SCHEMA: dict[str, dict[str, tuple[Callable, Any]]] = {
    "experiment": {
        "kind": (_choice(*KINDS), None),
        "master_seed": (_int, 0),
        "workers": (_int, 1),
        "out": (_optional(str), None),
    },
    "chain": {
        "total_sites": (_optional(_int), ...),
        "boundary": (_choice("fixed", "periodic", "open"), ...),
        "a": (_float, 1.0),
        "b": (_float, 1.0),
        "nu": (_float, 1.0),
        "z": (_int, ...),
    },
    "baths": {
        "mu": (_float, 1.0),
        "t_left": (_float, 4.0),
        "t_right": (_float, 1.0),
    },
    "ness": {
        "dt": (_float, 0.005),
        "steps_relax": (_int, 20_000_000),
        "steps_measure": (_int, 20_000_000),
        "measure_stride": (_int, 1000),
        "n_runs": (_int, 4),
    },
    "sweep": {
        "n_dynamic_values": (_list(_int), (32, 64, 128)),
        "nu_values": (_optional(_list(_float)), None),
    },
    "ring": {
        "dt": (_float, 1e-4),
        "t_final": (_float, 8000.0),
        "sample_stride": (_int, 500),
        "initial_q": (_pairs, ((0, -1.0), (2, 1.0))),
        "initial_p": (_pairs, ((1, 1.0),)),
        "envelope_window": (_optional(_float), None),
    },
    "poincare": {
        "dt": (_float, 1e-4),
        "t_final": (_float, 1e5),
        "delta": (_float, 1e-3),
        "mode": (_choice(*(m.value for m in Detection)), Detection.SIGN_CROSSING.value),
        "n_initial": (_int, 5),
        "energy_scale": (_float, 1.0),
        "initial": (_optional(_list(_float)), None),
        "slice_tol": (_float, 0.01),
        "slice_max_tol": (_float, 0.1),
        "min_points": (_int, 500),
        "slice_quantiles": (_list(_float), (0.25, 0.75)),
    },
}

SECTIONS_FOR = {
    "ness": ("experiment", "chain", "baths", "ness"),
    "sweep": ("experiment", "chain", "baths", "ness", "sweep"),
    "ring": ("experiment", "chain", "ring"),
    "poincare": ("experiment", "chain", "poincare"),
}

_KIND_DEFAULTS = {
    "ness": {"total_sites": 66, "boundary": "fixed", "z": 2},
    "sweep": {"total_sites": None, "boundary": "fixed", "z": 2},
    "ring": {"total_sites": 200, "boundary": "periodic", "z": 2},
    "poincare": {"total_sites": 3, "boundary": "open", "z": 2},
}


@dataclass
class ExperimentConfig:
    """Validated configuration: the experiment kind plus typed section values."""

    kind: str
    values: dict[str, dict[str, Any]] = field(default_factory=dict)

    @property
    def master_seed(self) -> int:
        return self.values["experiment"]["master_seed"]

    @property
    def workers(self) -> int:
        return self.values["experiment"]["workers"]

    @property
    def out(self) -> str | None:
        return self.values["experiment"]["out"]

    def with_overrides(self, seed: int | None = None, workers: int | None = None):
        vals = {k: dict(v) for k, v in self.values.items()}
        if seed is not None:
            vals["experiment"]["master_seed"] = int(seed)
        if workers is not None:
            vals["experiment"]["workers"] = int(workers)
        cfg = ExperimentConfig(self.kind, vals)
        _validate(cfg, {})
        return cfg

    # --- builders for module configs -------------------------------------

    def chain(self, n_dynamic: int | None = None) -> ChainSpec:
        c = self.values["chain"]
        boundary = Boundary.parse(c["boundary"])
        kw = dict(a=c["a"], b=c["b"], nu=c["nu"], z=c["z"])
        if n_dynamic is not None:
            return ChainSpec(n_dynamic, boundary, **kw)
        return ChainSpec.with_total_sites(c["total_sites"], boundary, **kw)

    def ness(self, n_dynamic: int | None = None) -> NessConfig:
        b, n = self.values["baths"], self.values["ness"]
        return NessConfig(self.chain(n_dynamic), mu=b["mu"], t_left=b["t_left"],
                          t_right=b["t_right"], master_seed=self.master_seed, **n)

    def ring(self) -> RingConfig:
        return RingConfig(self.chain(), **self.values["ring"])

    def emit(self) -> str:
        """Serialise to text that parses back to an equal config."""
        lines = []
        for section in SECTIONS_FOR[self.kind]:
            lines.append(f"[{section}]")
            for key, v in self.values[section].items():
                lines.append(f"{key} = {_fmt(v)}")
            lines.append("")
        return "\n".join(lines)


def _line_index(text: str) -> dict[tuple[str, str | None], int]:
    idx: dict[tuple[str, str | None], int] = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            idx.setdefault((section, None), no)
            continue
        if section is not None:
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            idx.setdefault((section, key), no)
    return idx


def parse_config(text: str, kind: str | None = None) -> ExperimentConfig:
    """Parse and validate configuration text; fill defaults.

    ``kind`` (e.g. from the command line) must agree with ``[experiment] kind``
    when both are given.

    Raises:
        ConfigError: malformed text (with its line), unknown sections or keys,
            bad values, or violated invariants.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("expected a [section] header", e.lineno) from None
    except configparser.ParsingError as e:
        raise ConfigError(f"cannot parse {e.errors[0][1]!r}", e.errors[0][0]) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as e:
        raise ConfigError(str(e).split(":")[-1].strip(), e.lineno) from None
    lines = _line_index(text)
    file_kind = cp.get("experiment", "kind", fallback=None)
    if file_kind is not None:
        try:
            file_kind = SCHEMA["experiment"]["kind"][0](file_kind)
        except ValueError as e:
            raise ConfigError(str(e), lines.get(("experiment", "kind"))) from None
    if kind is not None and file_kind is not None and kind != file_kind:
        raise ConfigError(f"config is for {file_kind!r} but {kind!r} was requested",
                          lines.get(("experiment", "kind")))
    kind = kind or file_kind
    if kind not in KINDS:
        raise ConfigError("experiment kind missing; set [experiment] kind or pass it")

    allowed = SECTIONS_FOR[kind]
    values: dict[str, dict[str, Any]] = {}
    for section in cp.sections():
        if section not in allowed:
            raise ConfigError(f"section [{section}] is not valid for a {kind} experiment",
                              lines.get((section, None)))
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]",
                                  lines.get((section, key)))
    for section in allowed:
        values[section] = {}
        for key, (conv, default) in SCHEMA[section].items():
            if cp.has_option(section, key):
                raw = cp.get(section, key)
                try:
                    v = conv(raw)
                except ValueError as e:
                    raise ConfigError(f"[{section}] {key}: {e}", lines.get((section, key))) \
                        from None
            elif default is ...:
                v = _KIND_DEFAULTS[kind][key]
            else:
                v = default
            values[section][key] = v
    values["experiment"]["kind"] = kind
    cfg = ExperimentConfig(kind, values)
    _validate(cfg, lines)
    return cfg


def _validate(cfg: ExperimentConfig, lines: dict) -> None:
    """Check module invariants by building the module configs."""

    def fail(msg, section=None, key=None):
        raise ConfigError(msg, lines.get((section, key)) if section else None)

    v = cfg.values
    if v["experiment"]["workers"] < 1:
        fail("workers must be >= 1", "experiment", "workers")
    c = v["chain"]
    if c["z"] < 2 or c["z"] % 2:
        fail(f"pinning power z must be an even integer >= 2, got {c['z']}", "chain", "z")
    if cfg.kind != "sweep" and c["total_sites"] is None:
        fail(f"a {cfg.kind} experiment needs total_sites", "chain", "total_sites")
    expected = {"ness": "fixed", "sweep": "fixed", "ring": "periodic", "poincare": "open"}
    if c["boundary"] != expected[cfg.kind]:
        fail(f"a {cfg.kind} experiment needs a {expected[cfg.kind]} boundary",
             "chain", "boundary")
    try:
        if cfg.kind == "sweep":
            ns = v["sweep"]["n_dynamic_values"]
            if not ns:
                fail("n_dynamic_values is empty", "sweep", "n_dynamic_values")
            if len(set(ns)) != len(ns):
                fail("duplicate n_dynamic_values", "sweep", "n_dynamic_values")
            nus = v["sweep"]["nu_values"]
            if nus is not None and any(x < 0 for x in nus):
                fail("nu_values must be >= 0", "sweep", "nu_values")
            if c["total_sites"] is not None:
                fail("a sweep takes n_dynamic_values, not total_sites", "chain", "total_sites")
            for n in ns:
                cfg.ness(n)
        elif cfg.kind == "ness":
            cfg.ness()
        elif cfg.kind == "ring":
            cfg.ring().window_time
        else:
            p = v["poincare"]
            cfg.chain()
            if c["total_sites"] != 3:
                fail("Poincare sections need exactly 3 sites", "chain", "total_sites")
            if p["initial"] is not None and len(p["initial"]) != 6:
                fail("initial needs six values q0 q1 q2 p0 p1 p2", "poincare", "initial")
            if p["n_initial"] < 1:
                fail("n_initial must be >= 1", "poincare", "n_initial")
            for key in ("dt", "t_final", "delta", "energy_scale", "slice_tol"):
                if not p[key] > 0:
                    fail(f"{key} must be > 0", "poincare", key)
            if p["slice_max_tol"] < p["slice_tol"]:
                fail("slice_max_tol must be >= slice_tol", "poincare", "slice_max_tol")
            if any(not 0 <= x <= 1 for x in p["slice_quantiles"]):
                fail("slice_quantiles must lie in [0, 1]", "poincare", "slice_quantiles")
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None
