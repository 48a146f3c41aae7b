"""End-to-end verification runs driven by an :class:`ExperimentConfig`.

A run is split into independent tasks (one per ``(Q1, f)`` pair for the
bootstrap inequality, one per ``Q1`` for the stopping time and the B2
recursion). Every task derives its random stream from the config seed and its
own coordinates, so the result does not depend on the number of workers.
Results are merged with max/sum/and reductions in task order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .accretive import PseudoAccretiveSystem, build_system, validate
from .config import ExperimentConfig
from .czo import CZOperator, discretize, kernel_zoo
from .errors import ConfigError, DyadicError
from .grid import DyadicCube, format_cube, parse_cube
from .gridfunc import GridFunction
from .stopping import FAMILY, StoppingParams, decompose, stopping_tables, verify_lemma818
from .verifier import (
    auto_params,
    bootstrap_check,
    compute_B1,
    compute_B2_recursion,
    inequality_constants,
    lemma841_check,
    test_functions,
)

# tag of the headline row of every check
CHECK_TAGS = {
    "b1": "eq8.16",
    "validate": "thm6.6",
    "lemma818": "eq8.19",
    "bootstrap": "eq8.34",
    "b2": "eq8.38",
    "inequalities": "sec8",
}

# report tag of each inequality constant
INEQUALITY_TAGS = {
    "prop8.6": "p8.6",
    "prop8.8": "p8.8",
    "prop8.10": "p8.10",
    "lem8.14": "l8.14",
    "lem8.15": "l8.15",
    "eq8.42": "eq8.42",
    "eq8.44": "eq8.44",
    "eq6.13": "eq6.13",
    "eq6.13_dual": "eq6.13",
    "lem8.33": "l8.33",
    "lem8.33_tr": "l8.33",
    "lem8.35": "l8.35",
    "lem8.35_chain": "l8.35",
    "lem8.41": "l8.41",
    "nbr_sq": "sec3",
}
LEM815_MAX = 4.0
BOOTSTRAP_ERROR_KEYS = (
    "direct_two_ways",
    "II_inner_form_error",
    "III_split_error",
    "III_in_identity_error",
    "IV_split_error",
    "identity_error",
)


@dataclass
class BoundReport:
    B1: float
    B2: float
    eps: float
    C: float
    terms: dict
    lemmas: dict
    constants: dict
    checks: dict
    details: dict
    config: dict
    config_hash: str
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def failures(self) -> list[str]:
        out = []
        for name in self.checks:
            out += [f"{name}: {item}" for item in self.checks[name]["failures"]]
        return out

    def to_dict(self) -> dict:
        return {
            "B1": self.B1,
            "B2": self.B2,
            "eps_realized": self.eps,
            "C_realized": self.C,
            "terms": self.terms,
            "lemmas": self.lemmas,
            "constants": self.constants,
            "checks": self.checks,
            "details": self.details,
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "meta": self.meta,
            "passed": self.passed,
        }

    def summary_rows(self) -> list[dict]:
        """One row per enabled check."""
        return [
            {
                "tag": c["tag"],
                "metric": c["metric"],
                "value": c["value"],
                "passed": c["passed"],
                "config_hash": self.config_hash,
                "seed": self.seed,
            }
            for c in self.checks.values()
        ]

    def constant_rows(self) -> list[dict]:
        return [
            {
                "tag": v["tag"],
                "metric": k,
                "value": v["value"],
                "passed": v["passed"],
                "config_hash": self.config_hash,
                "seed": self.seed,
            }
            for k, v in sorted(self.constants.items())
        ]


# -- building blocks ---------------------------------------------------------------


def build_operator(cfg: ExperimentConfig, kernel: dict | None = None) -> CZOperator:
    kb = cfg.kernel if kernel is None else kernel
    return discretize(kernel_zoo(kb["name"], kb["params"], cfg.n), cfg.spec, kb["rule"], cfg.cache_dir)


def build_systems(cfg: ExperimentConfig) -> tuple[PseudoAccretiveSystem, PseudoAccretiveSystem]:
    return (
        build_system(cfg.systems["side1"], cfg.spec, 1),
        build_system(cfg.systems["side2"], cfg.spec, 2),
    )


def q1_cubes(cfg: ExperimentConfig) -> list[DyadicCube]:
    return [Q for g in cfg.q1_generations for Q in cfg.spec.cubes(g)]


def stopping_params(cfg: ExperimentConfig, b: GridFunction, T: CZOperator, Q1: DyadicCube, q: float):
    """Fixed ``c_thr`` from the config, or ``c_thr_factor`` times the rule value at Q1."""
    delta = cfg.stopping["delta"]
    if "c_thr" in cfg.stopping:
        return StoppingParams(delta=delta, c_thr=cfg.stopping["c_thr"], q=q), None
    return auto_params(b, T, Q1, delta, cfg.stopping["c_thr_factor"], q)


def _task_rng(cfg: ExperimentConfig, *coords) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, *coords])


def _map(fn, items, jobs: int, label=str):
    """Ordered map; a task raising a (non-config) DyadicError becomes a failed item."""

    def guarded(x):
        try:
            return fn(x)
        except ConfigError:
            raise
        except DyadicError as exc:
            return {"result": None, "failures": [f"{label(x)}: {exc}"]}

    if jobs <= 1 or len(items) <= 1:
        res = [guarded(x) for x in items]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            res = list(ex.map(guarded, items))
    return res, [r for r in res if r["result"] is not None]


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)


def _check(tag, metric, value, failures) -> dict:
    return {"tag": tag, "metric": metric, "value": float(value), "passed": not failures, "failures": failures}


def _merge(results: list[dict]) -> dict:
    """Max over numbers, conjunction over booleans."""
    out: dict = {}
    for r in results:
        for k, v in r.items():
            if isinstance(v, bool):
                out[k] = out.get(k, True) and v
            elif isinstance(v, (int, float)):
                out[k] = max(out.get(k, -math.inf), v)
    return out


# -- per-item tasks ------------------------------------------------------------------


@dataclass
class _Run:
    cfg: ExperimentConfig
    T: CZOperator
    sys1: PseudoAccretiveSystem
    sys2: PseudoAccretiveSystem
    params: dict = field(default_factory=dict)

    def side_params(self, Q1: DyadicCube, side: int) -> StoppingParams:
        key = (Q1, side)
        if key not in self.params:
            sys, T = (self.sys1, self.T) if side == 1 else (self.sys2, self.T.transpose())
            self.params[key] = stopping_params(self.cfg, sys.b(Q1), T, Q1, sys.q)[0]
        return self.params[key]


def _lemma818_task(run: _Run, Q1: DyadicCube) -> dict:
    out = {}
    fails = []
    for side in (1, 2):
        sys, T = (run.sys1, run.T) if side == 1 else (run.sys2, run.T.transpose())
        b = sys.b(Q1)
        p = run.side_params(Q1, side)
        d = decompose(Q1, b, T, p, stopping_tables(b, T, p.q))
        r = verify_lemma818(d, b, T, sys)
        ok = {
            "eq8.19": r["eq8.19"],
            "eq8.20": r["eq8.20"]["ok"],
            "eq8.23": r["eq8.23"]["ok"],
            "eq8.27": r["eq8.27"]["ok"],
            "partition": r["partition_ok"],
            "sound": r["sound"],
            "maximal": r["maximal"],
            "bad2_in_level_sets": r["bad2_in_level_sets"],
        }
        fails += [f"{format_cube(Q1)} side{side} {k}" for k, v in ok.items() if not v]
        out[f"side{side}"] = {
            "params": p.to_dict(),
            "eps_realized": r["eps_realized"],
            "n_bad": r["n_bad"],
            "eq8.21": r["eq8.21"],
            "eq8.22": r["eq8.22"],
            "eq8.23_ratio": r["eq8.23"]["structural_buffer_measure"] / max(r["eq8.23"]["bound"], 1e-300)
            if r["eq8.23"]["bound"] > 0
            else 0.0,
            "weak_type_constant": r["weak_type_constant"],
            "ok": ok,
        }
    return {"Q1": format_cube(Q1), "result": out, "failures": fails}


def _bootstrap_task(run: _Run, item) -> dict:
    Q1, kind, j, f, B1 = item
    cfg = run.cfg
    r = bootstrap_check(Q1, f, run.T, run.sys1, run.side_params(Q1, 1), B1=B1, tol=cfg.tolerance)
    scale = max(1.0, r["direct"])
    fails = [k for k in BOOTSTRAP_ERROR_KEYS if not r[k] <= cfg.tolerance * scale]
    fails += [k for k, v in r.items() if isinstance(v, bool) and not v]
    label = f"{format_cube(Q1)} {kind}[{j}]"
    return {"label": label, "result": r, "failures": [f"{label} {k}" for k in fails]}


def _b2_task(run: _Run, Q1: DyadicCube) -> dict:
    cfg = run.cfg
    Q2 = parse_cube(cfg.q2) if cfg.q2 is not None else Q1
    if not Q1.contains(Q2):
        Q2 = Q1
    p1, p2 = run.side_params(Q1, 1), run.side_params(Q2, 2)
    r = compute_B2_recursion(Q1, Q2, run.T, run.sys1, run.sys2, p1, p2, decay=cfg.n == 1, tol=cfg.tolerance)
    fails = [k for k in ("split_ok", "Sigma3_ok", "Sigma1_triangle_ok") if not r[k]]
    if r["Sigma2_piece_error"] > cfg.tolerance:
        fails.append("Sigma2_piece_error")
    cm = r.get("coifman_meyer")
    if cm:
        for k, v in cm["checks"].items():
            if (isinstance(v, bool) and not v) or (not isinstance(v, bool) and v > cfg.tolerance):
                fails.append(f"coifman_meyer.{k}")
        if "error2_decay" in cm and not cm["error2_decay"]["summed_ok"]:
            fails.append("error2_decay.summed_ok")

    # sawtooth Lambda estimate on random g over Q2
    b1, b2 = run.sys1.b(Q1), run.sys2.b(Q2)
    d1 = decompose(Q1, b1, run.T, p1)
    d2 = decompose(Q2, b2, run.T.transpose(), p2)
    rng = _task_rng(cfg, 41, Q1.k, *Q1.idx)
    ratio, split_ok = 0.0, True
    for _ in range(max(cfg.test_functions["count"], 1)):
        g = GridFunction.random(cfg.spec, rng)
        l41 = lemma841_check(g, d1, d2, b1, b2, run.sys2)
        ratio = max(ratio, l41["ratio"])
        split_ok &= l41["split_ok"]
    r["lem8.41_random"] = {"ratio": ratio, "split_ok": bool(split_ok)}
    if not split_ok:
        fails.append("lem8.41 split")
    return {"Q1": format_cube(Q1), "result": r, "failures": [f"{format_cube(Q1)} {k}" for k in fails]}


# -- the full run ---------------------------------------------------------------------


def run_full_verification(cfg: ExperimentConfig, jobs: int = 1) -> BoundReport:
    """Run every enabled check and collect a :class:`BoundReport`."""
    spec = cfg.spec
    T = build_operator(cfg)
    sys1, sys2 = build_systems(cfg)
    run = _Run(cfg, T, sys1, sys2)
    cubes = q1_cubes(cfg)
    enabled = set(cfg.checks)
    checks: dict = {}
    details: dict = {}
    constants: dict = {}
    terms: dict = {}
    lemmas: dict = {}

    def const(name, tag, value, ok=True):
        constants[name] = {"tag": tag, "value": float(value), "passed": bool(ok and _finite(float(value)))}

    root = spec.root()
    B1, B1_arg = compute_B1(T, root)
    B1_by_q1 = {Q: compute_B1(T, Q)[0] for Q in cubes}
    const("B1", "eq8.16", B1)
    if "b1" in enabled:
        details["b1"] = {"value": B1, "argmax": format_cube(B1_arg)}
        checks["b1"] = _check(CHECK_TAGS["b1"], "B1", B1, [] if _finite(B1) else ["B1 not finite"])

    if "validate" in enabled:
        v1, v2 = validate(sys1, T), validate(sys2, T)
        fails = []
        for side, v in (("side1", v1), ("side2", v2)):
            for key in ("support_ok", "normalized"):
                if not v[key]:
                    fails.append(f"{side} {key}")
            for key in ("C_i", "C_ii", "C_iii"):
                if not _finite(v[key]):
                    fails.append(f"{side} {key} not finite")
                const(f"{side}.{key}", "thm6.6", v[key])
        details["validate"] = {"side1": v1, "side2": v2}
        checks["validate"] = _check(CHECK_TAGS["validate"], "C_ii", max(v1["C_ii"], v2["C_ii"]), fails)

    eps = 1.0
    if "lemma818" in enabled:
        allres, res = _map(lambda Q: _lemma818_task(run, Q), cubes, jobs, format_cube)
        fails = [x for r in allres for x in r["failures"]]
        eps = min((r["result"][s]["eps_realized"] for r in res for s in ("side1", "side2")), default=0.0)
        details["lemma818"] = {r["Q1"]: r["result"] for r in res}
        for s in ("side1", "side2"):
            for key in ("eq8.21", "eq8.22", "eq8.23_ratio"):
                const(f"lem8.18.{s}.{key}", key[:6], max((r["result"][s][key] for r in res), default=0.0))
        const("lem8.18.eps_min", "eq8.19", eps, eps > 0)
        checks["lemma818"] = _check(CHECK_TAGS["lemma818"], "eps_realized_min", eps, fails)

    C_fit = 0.0
    if "bootstrap" in enabled:
        items = []
        for Q in cubes:
            for ki, kind in enumerate(cfg.test_functions["kinds"]):
                fs = test_functions(T, Q, kind, cfg.test_functions["count"], _task_rng(cfg, 16, ki, Q.k, *Q.idx))
                items += [(Q, kind, j, f, B1_by_q1[Q]) for j, f in enumerate(fs)]
        allres, res = _map(lambda it: _bootstrap_task(run, it), items, jobs, lambda it: f"{format_cube(it[0])} {it[1]}[{it[2]}]")
        fails = [x for r in allres for x in r["failures"]]
        merged = _merge([r["result"] for r in res]) if res else {}
        eps_b = min((r["result"]["eps"] for r in res), default=1.0)
        # realized (eps, C): smallest eps seen, smallest C making every item satisfy the bound
        C_fit = max((max(r["result"]["bootstrap_lhs"] - (1 - eps_b) * r["result"]["B1"], 0.0) for r in res), default=0.0)
        if res and eps_b <= 0:
            fails.append("realized eps is not positive")
        terms = {k: merged.get(k, 0.0) for k in ("I", "II", "III", "IV", "direct")}
        details["bootstrap"] = {
            "merged": merged,
            "eps_realized": eps_b,
            "C_realized": C_fit,
            "n_items": len(res),
            "max_lhs": merged.get("bootstrap_lhs", 0.0),
        }
        for k in ("I", "II", "III", "IV"):
            const(f"eq8.34.{k}_max", "eq8.34", terms[k])
        const("eq8.16.eps_realized", "eq8.16", eps_b, eps_b > 0 or not res)
        const("eq8.16.C_realized", "eq8.16", C_fit)
        const("eq8.29.ring_const", "eq8.29", merged.get("III_ring_const", 0.0))
        const("eq8.30.far_const", "eq8.30", merged.get("III_far_const", 0.0))
        const("eq8.32.IV_local_ratio", "eq8.32", merged.get("IV_local_ratio", 0.0))
        const("eq8.37.II_cauchy_schwarz", "eq8.37", merged.get("II_cauchy_schwarz", 0.0))
        eps = min(eps, eps_b)
        checks["bootstrap"] = _check(CHECK_TAGS["bootstrap"], "C_realized", C_fit, fails)

    B2 = 0.0
    if "b2" in enabled:
        allres, res = _map(lambda Q: _b2_task(run, Q), cubes, jobs, format_cube)
        fails = [x for r in allres for x in r["failures"]]
        B2 = max((r["result"]["B2"] for r in res), default=0.0)
        details["b2"] = {r["Q1"]: r["result"] for r in res}
        const("B2", "eq8.38", B2)
        for key, tag in (
            ("Sigma2_far_const", "eq8.38"),
            ("Sigma2_near_const", "eq8.38"),
            ("Sigma2_self_const", "eq8.38"),
            ("Sigma1_one_const", "eq8.39"),
            ("Sigma1_replacement_const", "eq8.39"),
        ):
            const(key, tag, max((r["result"][key] for r in res), default=0.0))
        l41 = max((r["result"]["lem8.41_random"]["ratio"] for r in res), default=0.0)
        const("lem8.41.random_g", "l8.41", l41)
        lemmas["lem8.41_random"] = l41
        checks["b2"] = _check(CHECK_TAGS["b2"], "B2", B2, fails)

    if "inequalities" in enabled:
        try:
            p1, p2 = run.side_params(root, 1), run.side_params(root, 2)
            ic = inequality_constants(T, sys1, sys2, p1, _task_rng(cfg, 8), trials=4, Q1=root, params2=p2)
        except ConfigError:
            raise
        except DyadicError as exc:
            ic, fails = {}, [f"root: {exc}"]
        else:
            fails = [k for k, v in ic.items() if not _finite(v)]
        if ic.get("lem8.15", 0.0) > LEM815_MAX:
            fails.append(f"lem8.15 = {ic['lem8.15']:.6g} exceeds {LEM815_MAX}")
        if ic and ic["lem8.35"] > ic["lem8.35_chain"] * (1 + 1e-12):
            fails.append("lem8.35 exceeds its constant chain")
        for k, v in ic.items():
            const(k, INEQUALITY_TAGS.get(k, k), v)
        lemmas.update(ic)
        finite = [v for v in ic.values() if _finite(v)]
        checks["inequalities"] = _check(CHECK_TAGS["inequalities"], "max_constant", max(finite, default=0.0), fails)

    return BoundReport(
        B1=B1,
        B2=B2,
        eps=eps,
        C=C_fit,
        terms=terms,
        lemmas=lemmas,
        constants=constants,
        checks=checks,
        details=details,
        config=cfg.to_dict(),
        config_hash=cfg.hash(),
        seed=cfg.seed,
        meta={
            "grid": spec.to_dict(),
            "kernel": T.kernel,
            "quadrature_rule": T.rule,
            "maximal_family": "dyadic cubes and concentric doubles",
            "stopping_family": FAMILY,
        },
    )


def run_decompose(cfg: ExperimentConfig) -> dict:
    """Side-1 stopping time at every configured Q1, with the decomposition summary."""
    T = build_operator(cfg)
    sys1, _ = build_systems(cfg)
    out = {"config_hash": cfg.hash(), "seed": cfg.seed, "decompositions": []}
    for Q1 in q1_cubes(cfg):
        b = sys1.b(Q1)
        p, _ = stopping_params(cfg, b, T, Q1, sys1.q)
        d = decompose(Q1, b, T, p)
        r = verify_lemma818(d, b, T, sys1)
        entry = d.to_dict()
        entry["lemma818"] = r
        out["decompositions"].append(entry)
    return out


def sweep_configs(cfg: ExperimentConfig) -> list[tuple[float, ExperimentConfig]]:
    """One config per sweep value; ``tau`` applies to every kernel that has it."""
    if cfg.sweep is None:
        raise DyadicError("config has no sweep block")
    param, values = cfg.sweep["param"], cfg.sweep["values"]
    base = cfg.to_dict()
    base.pop("sweep")
    out = []
    for v in values:
        data = {**base, "grid": dict(base["grid"]), "stopping": dict(base["stopping"])}
        if param == "tau":
            data["kernels"] = [{**k, "params": {**k["params"], "tau": float(v)}} for k in base["kernels"]]
        elif param == "delta":
            data["stopping"]["delta"] = float(v)
        elif param == "L":
            data["grid"]["L"] = int(v)
        elif param == "q":
            data["systems"] = {s: {**c, "q": float(v)} for s, c in base["systems"].items()}
        data["cache_dir"] = cfg.cache_dir
        out.append((v, cfg.replace(**data)))
    return out
