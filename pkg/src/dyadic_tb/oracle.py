"""Brute-force reference computations for small grids (L <= 4).

Everything here is written with explicit Python loops over cells and cubes,
sharing no code with the vectorized implementation beyond the kernel
definitions themselves. ``write_golden`` stores oracle values in JSON files
that the test suite compares the library against.
"""
from __future__ import annotations

import itertools
import json
import math
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .czo import CZOperator, discretize, kernel_zoo, t1_loc
from .errors import ConfigError
from .grid import DyadicCube, GridSpec, format_cube, parse_cube
from .gridfunc import GridFunction, average, lp_norm, maximal_function
from .verifier import compute_B1

ORACLE_MAX_DEPTH = 4
GOLDEN_TOLERANCE = 1e-12


def _cells(spec: GridSpec):
    return list(itertools.product(range(spec.side), repeat=spec.n))


def _quad_points(cell, spec: GridSpec, rule: str):
    h = 1.0 / spec.side
    if rule == "midpoint":
        offs, ws = [0.5], [1.0]
    else:
        d = 0.5 / math.sqrt(3.0)
        offs, ws = [0.5 - d, 0.5 + d], [0.5, 0.5]
    pts = []
    for combo in itertools.product(range(len(offs)), repeat=spec.n):
        x = [(cell[a] + offs[combo[a]]) * h for a in range(spec.n)]
        w = 1.0
        for c in combo:
            w *= ws[c]
        pts.append((x, w))
    return pts


def _scalar_kernel(name: str, params: dict, n: int):
    """Scalar kernel ``K(x, y)``; the two named kernels are re-derived from their formulas."""
    if name == "truncated_hilbert":
        tau = float(params["tau"])

        def K(x, y):
            t = x[0] - y[0]
            return t / (t * t + tau * tau)

        return K
    if name == "truncated_riesz":
        tau = float(params["tau"])
        comp = int(params.get("component", 0))

        def K(x, y):
            z = [x[a] - y[a] for a in range(n)]
            r2 = sum(c * c for c in z)
            return z[comp] / (r2 + tau * tau) ** 1.5

        return K
    kern = kernel_zoo(name, params, n)

    def K(x, y):
        return complex(kern(np.array(x), np.array(y)))

    return K


def operator_entries(name: str, params: dict, spec: GridSpec, rule: str = "midpoint") -> dict:
    """``{(x_cell, y_cell): weight}`` with the cell-pair quadrature of the kernel."""
    if spec.L > ORACLE_MAX_DEPTH:
        raise ConfigError(f"oracles are limited to L <= {ORACLE_MAX_DEPTH}")
    K = _scalar_kernel(name, params, spec.n)
    vol = 1.0 / spec.side ** spec.n
    cells = _cells(spec)
    quad = {c: _quad_points(c, spec, rule) for c in cells}
    out = {}
    for cx in cells:
        for cy in cells:
            s = 0.0
            for x, wx in quad[cx]:
                for y, wy in quad[cy]:
                    s += wx * wy * K(x, y)
            out[(cx, cy)] = s * vol
    return out


def apply_oracle(entries: dict, f: np.ndarray, spec: GridSpec, transpose: bool = False) -> np.ndarray:
    out = np.zeros(spec.shape, dtype=complex)
    for (cx, cy), w in entries.items():
        if transpose:
            out[cy] += w * f[cx]
        else:
            out[cx] += w * f[cy]
    return out


def _cube_cells(Q: DyadicCube, spec: GridSpec):
    s = spec.side >> Q.k
    ranges = [range(i * s, (i + 1) * s) for i in Q.idx]
    return list(itertools.product(*ranges))


def _all_cubes(spec: GridSpec):
    for k in range(spec.L + 1):
        for idx in itertools.product(range(1 << k), repeat=spec.n):
            yield DyadicCube(k, idx)


def B1_oracle(entries: dict, spec: GridSpec) -> float:
    """``max_Q |Q|^-1 int_Q |T^tr 1_Q|`` by summing kernel weights cube by cube."""
    best = 0.0
    vol = 1.0 / spec.side ** spec.n
    for Q in _all_cubes(spec):
        cells = _cube_cells(Q, spec)
        tot = 0.0
        for x in cells:
            tot += abs(sum(entries[(y, x)] for y in cells)) * vol
        best = max(best, tot / Q.measure)
    return best


def t1_loc_oracle(entries: dict, Q: DyadicCube, spec: GridSpec) -> tuple[float, float]:
    cells = _cube_cells(Q, spec)
    vol = 1.0 / spec.side ** spec.n
    fwd = sum(abs(sum(entries[(x, y)] for y in cells)) for x in cells) * vol / Q.measure
    tr = sum(abs(sum(entries[(y, x)] for y in cells)) for x in cells) * vol / Q.measure
    return fwd, tr


def average_oracle(f: np.ndarray, Q: DyadicCube, spec: GridSpec) -> complex:
    cells = _cube_cells(Q, spec)
    return sum(complex(f[c]) for c in cells) / len(cells)


def lp_oracle(f: np.ndarray, spec: GridSpec, p: float) -> float:
    vol = 1.0 / spec.side ** spec.n
    return math.fsum(abs(complex(f[c])) ** p * vol for c in _cells(spec)) ** (1.0 / p)


def maximal_oracle(absf: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Max over dyadic cubes and concentric doubles (covering raster, generation >= 1) containing x."""
    out = np.zeros(spec.shape)
    for Q in _all_cubes(spec):
        cells = _cube_cells(Q, spec)
        avg = sum(absf[c] for c in cells) / len(cells)
        for c in cells:
            out[c] = max(out[c], avg)
        if Q.k == 0:
            continue
        s = spec.side >> Q.k
        e = math.ceil(s / 2)
        ranges = [range(i * s - e, (i + 1) * s + e) for i in Q.idx]
        raster = list(itertools.product(*ranges))
        inside = [c for c in raster if all(0 <= a < spec.side for a in c)]
        davg = sum(absf[c] for c in inside) / len(raster)
        for c in inside:
            out[c] = max(out[c], davg)
    return out


def _random_f(spec: GridSpec, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 5])
    return rng.standard_normal(spec.shape) + 1j * rng.standard_normal(spec.shape)


def _pairs(arr: np.ndarray) -> list:
    return [[float(z.real), float(z.imag)] for z in np.asarray(arr, dtype=complex).ravel()]


def _unpairs(data, shape) -> np.ndarray:
    return np.array([complex(a, b) for a, b in data]).reshape(shape)


def golden_record(kernel: dict, spec: GridSpec, seed: int) -> dict:
    """Oracle values for one kernel on one grid."""
    entries = operator_entries(kernel["name"], kernel["params"], spec, kernel["rule"])
    f = _random_f(spec, seed)
    cubes = list(_all_cubes(spec))
    return {
        "kernel": kernel,
        "grid": spec.to_dict(),
        "seed": seed,
        "f": _pairs(f),
        "Tf": _pairs(apply_oracle(entries, f, spec)),
        "Ttr_f": _pairs(apply_oracle(entries, f, spec, transpose=True)),
        "B1": B1_oracle(entries, spec),
        "t1_loc": {format_cube(Q): list(t1_loc_oracle(entries, Q, spec)) for Q in cubes},
        "averages": {format_cube(Q): list(_pairs([average_oracle(f, Q, spec)])[0]) for Q in cubes},
        "lp": {str(p): lp_oracle(f, spec, p) for p in (1.0, 2.0, 2.5, 4.0)},
        "maximal": maximal_oracle(np.abs(f), spec).ravel().tolist(),
    }


def compare_golden(rec: dict) -> dict:
    """Largest deviation of the library from a golden record, per quantity."""
    spec = GridSpec(rec["grid"]["n"], rec["grid"]["L"])
    k = rec["kernel"]
    T: CZOperator = discretize(kernel_zoo(k["name"], k["params"], spec.n), spec, k["rule"])
    f = _unpairs(rec["f"], spec.shape)
    g = GridFunction(spec, f)
    dev = {
        "apply": float(np.abs(T.apply_array(f) - _unpairs(rec["Tf"], spec.shape)).max()),
        "apply_transpose": float(np.abs(T.apply_transpose_array(f) - _unpairs(rec["Ttr_f"], spec.shape)).max()),
        "B1": abs(compute_B1(T)[0] - rec["B1"]),
    }
    t1 = avg = 0.0
    for key, (a, b) in rec["t1_loc"].items():
        x, y = t1_loc(T, parse_cube(key))
        t1 = max(t1, abs(x - a), abs(y - b))
    for key, (re, im) in rec["averages"].items():
        avg = max(avg, abs(average(g, parse_cube(key)) - complex(re, im)))
    dev["t1_loc"] = t1
    dev["averages"] = avg
    dev["lp"] = max(abs(lp_norm(g, float(p)) - v) for p, v in rec["lp"].items())
    dev["maximal"] = float(np.abs(maximal_function(g).values.ravel() - np.array(rec["maximal"])).max())
    return dev


def golden_name(kernel: dict, spec: GridSpec) -> str:
    return f"golden_{kernel['name']}_n{spec.n}_L{spec.L}_{kernel['rule']}.json"


def write_golden(cfg: ExperimentConfig, out: str | Path) -> dict:
    """Write one golden file per configured kernel and report library deviations."""
    spec = cfg.spec
    if spec.L > ORACLE_MAX_DEPTH:
        raise ConfigError(f"oracles are limited to L <= {ORACLE_MAX_DEPTH}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    deviations = {}
    files = []
    for kernel in cfg.kernels:
        rec = golden_record(kernel, spec, cfg.seed)
        path = out / golden_name(kernel, spec)
        # full repr precision so the files round-trip exactly
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(rec, sort_keys=True, indent=1) + "\n")
        files.append(path.name)
        for key, v in compare_golden(rec).items():
            deviations[f"{kernel['name']}.{key}"] = v
    return {"files": files, "deviations": deviations, "tolerance": GOLDEN_TOLERANCE}
