"""Experiment configuration: one JSON document, validated up front.

Example::

    {
      "grid": {"n": 1, "L": 6},
      "kernel": {"name": "truncated_hilbert", "params": {"tau": 0.0625}, "rule": "midpoint"},
      "systems": {"side1": {"kind": "perturbed", "seed": 1, "amplitude": 0.25},
                  "side2": {"kind": "perturbed", "seed": 2, "amplitude": 0.25}},
      "stopping": {"delta": 0.25, "c_thr_factor": 2.0},
      "test_functions": {"kinds": ["random_sign", "extremal"], "count": 4},
      "q1_generations": [0, 1],
      "checks": ["validate", "lemma818", "bootstrap", "b2", "inequalities"],
      "seed": 0
    }

``stopping.c_thr`` fixes the threshold outright; otherwise it is
``c_thr_factor`` times the stopping-rule value at each Q1. A ``sweep`` block
``{"param": "tau" | "delta" | "L" | "q", "values": [...]}`` drives the sweep
subcommand; ``kernels`` (a list of kernel blocks) may replace ``kernel``.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .czo import KERNEL_NAMES, QUADRATURE_RULES
from .errors import ConfigError, DyadicError
from .grid import MAX_DEPTH, GridSpec, parse_cube

CHECKS = ("b1", "validate", "lemma818", "bootstrap", "b2", "inequalities")
DEFAULT_CHECKS = CHECKS
SWEEP_PARAMS = ("tau", "delta", "L", "q")
SYSTEM_KINDS = ("constant", "perturbed", "file", "table")
TEST_KINDS = ("random_sign", "random_bounded", "extremal")


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _cube_literal(text, n: int | None = None, L: int | None = None):
    try:
        Q = parse_cube(str(text))
    except DyadicError as exc:
        raise ConfigError(str(exc)) from None
    if n is not None:
        _require(len(Q.idx) == n and 0 <= Q.k <= L and all(0 <= i < (1 << Q.k) for i in Q.idx),
                 f"cube {text!r} does not lie on the grid")
    return Q


def _kernel_block(raw) -> dict:
    _require(isinstance(raw, dict), "kernel must be an object")
    name = raw.get("name")
    _require(name in KERNEL_NAMES, f"unknown kernel {name!r}")
    params = raw.get("params") or {}
    _require(isinstance(params, dict), "kernel params must be an object")
    rule = raw.get("rule", "midpoint")
    _require(rule in QUADRATURE_RULES, f"unknown quadrature rule {rule!r}")
    return {"name": name, "params": dict(params), "rule": rule}


def _system_block(raw, side: int) -> dict:
    raw = {"kind": "constant"} if raw is None else raw
    _require(isinstance(raw, dict), f"system side{side} must be an object")
    kind = raw.get("kind", "constant")
    _require(kind in SYSTEM_KINDS, f"unknown system kind {kind!r}")
    out = dict(raw)
    out["kind"] = kind
    _require(float(out.get("q", 4.0)) > 2, "system q must exceed 2")
    if kind == "perturbed":
        a = float(out.get("amplitude", 0.25))
        _require(0 <= a < 1, "amplitude must lie in [0, 1)")
        _require(float(out.get("theta_max", 0.0)) >= 0, "theta_max must be non-negative")
        _require("seed" in out, "perturbed systems need an explicit seed")
    if kind == "file":
        _require("path" in out, "file systems need a path")
    if kind == "table":
        _require(isinstance(out.get("values"), dict), "table systems need a values map")
        for key in out["values"]:
            _cube_literal(key)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    L: int
    kernels: tuple
    systems: dict
    stopping: dict
    test_functions: dict
    q1_generations: tuple
    checks: tuple
    seed: int
    tolerance: float = 1e-10
    q2: str | None = None
    sweep: dict | None = None
    cache_dir: str | None = None
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.n, self.L)

    @property
    def kernel(self) -> dict:
        return self.kernels[0]

    def to_dict(self) -> dict:
        return {
            "grid": {"n": self.n, "L": self.L},
            "kernels": [dict(k) for k in self.kernels],
            "systems": copy.deepcopy(self.systems),
            "stopping": dict(self.stopping),
            "test_functions": dict(self.test_functions),
            "q1_generations": list(self.q1_generations),
            "checks": list(self.checks),
            "seed": self.seed,
            "tolerance": self.tolerance,
            "q2": self.q2,
            "sweep": copy.deepcopy(self.sweep),
        }

    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        data = self.to_dict()
        data["cache_dir"] = self.cache_dir
        data.update(changes)
        return parse_config(data)


def parse_config(data: dict, seed_override: int | None = None, tolerance_scale: float = 1.0) -> ExperimentConfig:
    _require(isinstance(data, dict), "config must be a JSON object")
    grid = data.get("grid")
    _require(isinstance(grid, dict), "config needs a grid block")
    try:
        n, L = int(grid["n"]), int(grid["L"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError("grid needs integer n and L") from None
    _require(n in (1, 2) and 1 <= L <= MAX_DEPTH, f"grid must have n in (1, 2) and 1 <= L <= {MAX_DEPTH}")

    if "kernels" in data:
        _require(isinstance(data["kernels"], list) and data["kernels"], "kernels must be a non-empty list")
        kernels = tuple(_kernel_block(k) for k in data["kernels"])
    else:
        _require("kernel" in data, "config needs a kernel block")
        kernels = (_kernel_block(data["kernel"]),)

    systems = data.get("systems") or {}
    _require(isinstance(systems, dict), "systems must be an object")
    systems = {"side1": _system_block(systems.get("side1"), 1), "side2": _system_block(systems.get("side2"), 2)}

    st = dict(data.get("stopping") or {})
    delta = float(st.get("delta", 0.25))
    _require(0 < delta < 1, "stopping delta must lie in (0, 1)")
    stopping = {"delta": delta}
    if st.get("c_thr") is not None:
        _require(float(st["c_thr"]) > 0, "c_thr must be positive")
        stopping["c_thr"] = float(st["c_thr"])
    else:
        fac = float(st.get("c_thr_factor", 2.0))
        _require(fac > 1, "c_thr_factor must exceed 1")
        stopping["c_thr_factor"] = fac

    tf = dict(data.get("test_functions") or {})
    kinds = tuple(tf.get("kinds", ("random_sign", "random_bounded", "extremal")))
    for k in kinds:
        _require(k in TEST_KINDS, f"unknown test-function family {k!r}")
    count = int(tf.get("count", 4))
    _require(count >= 0, "test function count must be non-negative")
    test_functions = {"kinds": list(kinds), "count": count}

    gens = tuple(int(g) for g in data.get("q1_generations", (0,)))
    _require(all(0 <= g < L for g in gens) and gens, "q1_generations must lie in [0, L)")
    checks = tuple(data.get("checks", DEFAULT_CHECKS))
    for c in checks:
        _require(c in CHECKS, f"unknown check {c!r}")

    _require("seed" in data, "config needs an explicit seed")
    seed = int(data["seed"]) if seed_override is None else int(seed_override)
    tol = float(data.get("tolerance", 1e-10)) * float(tolerance_scale)
    _require(tol > 0, "tolerance must be positive")

    q2 = data.get("q2")
    if q2 is not None:
        _cube_literal(q2, n, L)
    sweep = data.get("sweep")
    if sweep is not None:
        _require(isinstance(sweep, dict) and sweep.get("param") in SWEEP_PARAMS, f"sweep param must be one of {SWEEP_PARAMS}")
        _require(isinstance(sweep.get("values"), list) and sweep["values"], "sweep needs a list of values")
        sweep = {"param": sweep["param"], "values": list(sweep["values"])}
    return ExperimentConfig(
        n,
        L,
        kernels,
        systems,
        stopping,
        test_functions,
        gens,
        checks,
        seed,
        tol,
        q2,
        sweep,
        data.get("cache_dir"),
        data,
    )


def load_config(path: str | Path, seed_override: int | None = None, tolerance_scale: float = 1.0) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(data, seed_override, tolerance_scale)
