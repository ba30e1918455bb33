"""Self-describing CSV/JSON writers and the run manifest."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
import os
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

MANIFEST_NAME = "manifest.json"


def fmt_value(x: Any) -> str:
    """Cell text: floats at 17 significant digits, None as an empty cell."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return format(x, ".17g")
    return str(x)


def jsonable(obj: Any) -> Any:
    """Plain JSON types; NaN and inf become null."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_csv(path: Path, header: dict, columns: Sequence[str],
              rows: Iterable[Sequence[Any]]) -> Path:
    """CSV with a ``# key: value`` metadata block (values JSON-encoded)."""
    lines = [f"# {k}: {json.dumps(jsonable(v), sort_keys=True)}" for k, v in header.items()]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt_value(x) for x in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path: str | os.PathLike) -> tuple[dict, list[str], np.ndarray]:
    """Inverse of :func:`write_csv`: (metadata, column names, float array)."""
    meta, names, rows = {}, None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].partition(":")
            meta[k.strip()] = json.loads(v)
        elif names is None:
            names = line.split(",")
        elif line:
            rows.append([float(c) if c else math.nan for c in line.split(",")])
    arr = np.array(rows, dtype=float).reshape(-1, len(names or []))
    return meta, names or [], arr


def write_json(path: Path, obj: dict) -> Path:
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir: Path, files: Sequence[Path], info: dict) -> Path:
    """Write the manifest atomically; it is the completion marker of a run."""
    entries = [
        {"path": str(f.relative_to(out_dir)), "sha256": sha256(f), "bytes": f.stat().st_size}
        for f in files
    ]
    body = dict(info, files=entries)
    tmp = out_dir / (MANIFEST_NAME + ".tmp")
    write_json(tmp, body)
    os.replace(tmp, out_dir / MANIFEST_NAME)
    return out_dir / MANIFEST_NAME


def verify_manifest(out_dir: str | os.PathLike) -> bool:
    """True when every listed file exists with the recorded digest."""
    out_dir = Path(out_dir)
    man = json.loads((out_dir / MANIFEST_NAME).read_text())
    return all(
        (out_dir / e["path"]).is_file() and sha256(out_dir / e["path"]) == e["sha256"]
        for e in man["files"]
    )
