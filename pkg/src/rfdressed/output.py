"""Deterministic table output: CSV or raw float64, each with a JSON sidecar."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

FLOAT_FORMAT = "%.16e"  # 17 significant digits


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dump_json(obj, path: Path) -> None:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=False, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_table(directory, name: str, columns: Sequence[str], data, fmt: str,
                resolved_config: dict, diagnostics: dict) -> list:
    """Write ``data`` (rows x columns) as ``name.csv`` or ``name.bin`` plus ``name.json``.

    Column headers carry their unit suffix. The binary form is little-endian
    float64 in row-major order; the sidecar records columns and shape.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(columns):
        raise ValueError(f"data shape {data.shape} does not match {len(columns)} columns")
    if fmt == "csv":
        target = directory / f"{name}.csv"
        with open(target, "w", encoding="ascii", newline="\n") as fh:
            np.savetxt(fh, data, fmt=FLOAT_FORMAT, delimiter=",", header=",".join(columns),
                       comments="")
    elif fmt == "bin":
        target = directory / f"{name}.bin"
        np.ascontiguousarray(data, dtype="<f8").tofile(target)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    side = directory / f"{name}.json"
    dump_json({"resolved_config": resolved_config, "diagnostics": diagnostics,
               "table": {"file": target.name, "format": fmt, "columns": list(columns),
                         "shape": list(data.shape), "dtype": "float64 little-endian"}}, side)
    return [target, side]


def read_table(path) -> tuple:
    """Load a table written by :func:`write_table`; returns (columns, data)."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))["table"]
    if meta["format"] == "csv":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    else:
        data = np.fromfile(path, dtype="<f8").reshape(meta["shape"])
    return meta["columns"], data
