"""Deterministic CSV/JSON writers and run manifests."""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np

from . import __version__


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8", newline="\n")
    return path


def fmt(v) -> str:
    """12 significant digits, empty for missing values, 0/1 for flags."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".12g")


def write_csv(path: Path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def write_columns(path: Path, columns: dict, fmt_kind: str = "csv") -> Path:
    """Equal-length named columns as CSV (one row per index) or as a JSON object."""
    names = list(columns)
    n = len(next(iter(columns.values())))
    if fmt_kind == "json":
        return write_json(Path(path).with_suffix(".json"), {k: list(v) for k, v in columns.items()})
    rows = ([columns[k][i] for k in names] for i in range(n))
    return write_csv(path, names, rows)


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir: Path, stem: str, *, spec_hash: str, seed, command: list,
                   flags: dict, files: list) -> Path:
    man = {
        "tool_version": __version__,
        "spec_hash": spec_hash,
        "master_seed": seed,
        "subcommand": command,
        "flags": flags,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "files": {Path(f).name: sha256(f) for f in files},
    }
    return write_json(Path(out_dir) / f"{stem}.manifest.json", man)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise PermissionError(f"output directory {p} is not writable")
    return p
