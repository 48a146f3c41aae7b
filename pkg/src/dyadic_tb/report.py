"""Canonical serialization of reports.

JSON output has sorted keys, two-space indentation, floats printed with
``%.12e`` and LF line endings; non-finite floats become the strings
``"inf"``, ``"-inf"`` and ``"nan"``. CSV tables use the same float format.
Identical inputs therefore give byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .grid import DyadicCube, format_cube

FLOAT_FORMAT = "%.12e"
CSV_COLUMNS = ("tag", "metric", "value", "passed", "config_hash", "seed")
SWEEP_COLUMNS = ("sweep_param", "sweep_value") + CSV_COLUMNS


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return FLOAT_FORMAT % x


def _plain(obj):
    """Map numpy scalars, cubes, tuples and complex numbers onto JSON-ready values."""
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, DyadicCube):
        return format_cube(obj)
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _emit(obj, indent: int, out: list[str]):
    pad = "  " * indent
    if isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif obj is None:
        out.append("null")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        s = format_float(obj)
        out.append(s if math.isfinite(obj) else f'"{s}"')
    elif isinstance(obj, str):
        out.append(_json_string(obj))
    elif isinstance(obj, list):
        if not obj:
            out.append("[]")
            return
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(pad + "  ")
            _emit(v, indent + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "]")
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        keys = sorted(obj)
        for i, k in enumerate(keys):
            out.append(pad + "  " + _json_string(k) + ": ")
            _emit(obj[k], indent + 1, out)
            out.append(",\n" if i < len(keys) - 1 else "\n")
        out.append(pad + "}")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def _json_string(s: str) -> str:
    return json.dumps(s, ensure_ascii=True)


def canonical_dumps(obj) -> str:
    out: list[str] = []
    _emit(_plain(obj), 0, out)
    return "".join(out) + "\n"


def write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def write_json(path: str | Path, obj) -> Path:
    return write_text(path, canonical_dumps(obj))


def csv_text(rows: list[dict], columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return "" if v is None else str(v)


def write_csv(path: str | Path, rows: list[dict], columns=CSV_COLUMNS) -> Path:
    return write_text(path, csv_text(rows, columns))
