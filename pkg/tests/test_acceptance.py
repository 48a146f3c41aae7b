"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line in the summary."""
from __future__ import annotations

import json
import math
import statistics
import time

import numpy as np
import pytest
from _util import CONFIGS, GOLDEN, SYSTEMS, ZOO, operator, system_pair

from dyadic_tb.accretive import perturbed_system, table_system
from dyadic_tb.cli import main as cli_main
from dyadic_tb.config import load_config
from dyadic_tb.grid import DyadicCube, GridSpec, format_cube, parse_cube
from dyadic_tb.gridfunc import GridFunction
from dyadic_tb.invariants import grid_check
from dyadic_tb.oracle import GOLDEN_TOLERANCE, compare_golden, golden_record
from dyadic_tb.pipeline import run_full_verification
from dyadic_tb.stopping import StoppingParams, decompose, decompose_f, verify_lemma818
from dyadic_tb.verifier import auto_params, compute_B2_recursion, inequality_constants

TOL = 1e-10
TRIALS = 50
DEPTHS = (4, 5, 6)
# constants below this are treated as exact zeros in the depth-stability ratio
ZERO_FLOOR = 1e-12


def _random_f(spec: GridSpec, Q1: DyadicCube, rng) -> np.ndarray:
    f = rng.uniform(0, 1, spec.shape) * np.exp(2j * np.pi * rng.uniform(size=spec.shape))
    return np.where(Q1.mask(spec), f, 0)


def _random_setup(n: int, L: int, rng):
    """Random perturbed systems, Hilbert/Riesz kernel, delta and threshold factor."""
    spec = GridSpec(n, L)
    name = "truncated_hilbert" if n == 1 else "truncated_riesz"
    T = operator(name, {"tau": float(2.0 ** -rng.integers(3, 7))}, spec)
    seed = int(rng.integers(1 << 30))
    a = float(rng.choice([0.25, 0.5, 0.75]))
    th = float(rng.choice([0.0, 0.3]))
    s1 = perturbed_system(spec, seed, a, theta_max=th, side=1)
    s2 = perturbed_system(spec, seed, a, theta_max=th, side=2)
    delta = float(rng.choice([0.1, 0.25, 0.5]))
    factor = float(rng.choice([1.1, 1.5, 2.0, 4.0]))
    return spec, T, s1, s2, delta, factor


# -- criterion 1 ---------------------------------------------------------------------


def _decomposition_errors(n: int, L: int, rng) -> dict:
    """Reconstruction of f from its four components and the zeta_Q properties."""
    worst = {"reconstruction": 0.0, "zeta_mean": 0.0, "zeta_support": 0.0}
    n_zeta = 0
    for _ in range(TRIALS):
        spec, T, s1, _, delta, factor = _random_setup(n, L, rng)
        Q1 = spec.cubes(int(rng.integers(0, 2)))[0]
        b = s1.b(Q1)
        p, _ = auto_params(b, T, Q1, delta, factor)
        d = decompose(Q1, b, T, p)
        f = _random_f(spec, Q1, rng)
        F = decompose_f(GridFunction(spec, f), d, b, s1)
        worst["reconstruction"] = max(worst["reconstruction"], float(np.abs(F.total().values - f).max()))
        for Q in F.zeta:
            z = F.zeta_function(Q).values
            worst["zeta_mean"] = max(worst["zeta_mean"], abs(complex(F.zeta[Q].mean())))
            worst["zeta_support"] = max(worst["zeta_support"], float(np.abs(z[~Q.mask(spec)]).max(initial=0.0)))
            n_zeta += 1
    worst["n_zeta"] = n_zeta
    return worst


CM_KEYS = (
    "sum_error",
    "T1_form_error",
    "telescoping_error",
    "T2_split_error",
    "g_identity_error",
    "G_split_error",
    "gprime_identity_error",
    "Error2_identity_error",
)


def _sigma_cm_errors(n: int, L: int, rng) -> dict:
    """Sigma_1 + Sigma_2 + Sigma_3 = total and the Coifman-Meyer sub-identities."""
    worst = {k: 0.0 for k in CM_KEYS + ("split_error", "Sigma2_piece_error")}
    n_cm = n_runs = 0
    while n_runs < TRIALS or n_cm < TRIALS:
        spec, T, s1, s2, delta, factor = _random_setup(n, L, rng)
        Q1 = spec.root()
        level = spec.cubes(int(rng.integers(0, 2)))
        Q2 = level[int(rng.integers(len(level)))]
        p1, _ = auto_params(s1.b(Q1), T, Q1, delta, factor)
        p2, _ = auto_params(s2.b(Q2), T.transpose(), Q2, delta, factor)
        r = compute_B2_recursion(Q1, Q2, T, s1, s2, p1, p2)
        n_runs += 1
        worst["split_error"] = max(worst["split_error"], r["split_error"])
        worst["Sigma2_piece_error"] = max(worst["Sigma2_piece_error"], r["Sigma2_piece_error"])
        cm = r.get("coifman_meyer")
        if cm:
            n_cm += cm["n_cubes"]
            for k in CM_KEYS:
                worst[k] = max(worst[k], cm["checks"][k])
            assert cm["checks"]["accretivity_ok"]
    worst["n_runs"], worst["n_cm_cubes"] = n_runs, n_cm
    return worst


@pytest.mark.slow
def test_criterion1_exact_identities(record):
    t0 = time.time()
    errors = {}
    for n in (1, 2):
        for L in (2, 4, 6):
            for row in grid_check(GridSpec(n, L), np.random.default_rng([11, n, L]), TRIALS, TOL):
                key = f"{row['metric']}"
                errors[key] = max(errors.get(key, 0.0), row["value"])
    for n, L in ((1, 6), (2, 4)):
        rng = np.random.default_rng([12, n, L])
        dec = _decomposition_errors(n, L, rng)
        assert dec["n_zeta"] >= TRIALS
        for k in ("reconstruction", "zeta_mean", "zeta_support"):
            errors[f"eq8.24.{k}"] = max(errors.get(f"eq8.24.{k}", 0.0), dec[k])
        sig = _sigma_cm_errors(n, L, np.random.default_rng([13, n, L]))
        assert sig["n_cm_cubes"] >= TRIALS
        for k in CM_KEYS + ("split_error", "Sigma2_piece_error"):
            key = f"cm.{k}" if k in CM_KEYS else f"sigma.{k}"
            errors[key] = max(errors.get(key, 0.0), sig[k])
    worst_key = max(errors, key=errors.get)
    ok = all(v <= TOL for v in errors.values())
    record(
        "criterion 1 (exact identities)",
        ok,
        f"{len(errors)} identities, worst {worst_key} = {errors[worst_key]:.2e} (tol {TOL:g}), {time.time() - t0:.0f}s",
    )
    assert ok, {k: v for k, v in errors.items() if v > TOL}


# -- criterion 2 ---------------------------------------------------------------------


def _spread(values: list[float]) -> float:
    v = [0.0 if abs(x) < ZERO_FLOOR else abs(x) for x in values]
    if max(v) == 0:
        return 1.0
    if min(v) == 0:
        return math.inf
    return max(v) / min(v)


def _depth_constants(n: int, name: str, params: dict, kind: str) -> dict[int, dict]:
    out = {}
    for L in DEPTHS:
        spec = GridSpec(n, L)
        T = operator(name, params, spec)
        s1, s2 = system_pair(spec, kind)
        root = spec.root()
        p1, _ = auto_params(s1.b(root), T, root, 0.25, 2.0)
        p2, _ = auto_params(s2.b(root), T.transpose(), root, 0.25, 2.0)
        out[L] = inequality_constants(T, s1, s2, p1, np.random.default_rng([3, 8]), trials=4, Q1=root, params2=p2)
    return out


@pytest.mark.slow
def test_criterion2_depth_stable_constants(record):
    t0 = time.time()
    worst, worst_at, bad = 1.0, "", []
    n_const = 0
    for n in (1, 2):
        for name, params in ZOO[n]:
            for kind in SYSTEMS:
                table = _depth_constants(n, name, params, kind)
                for key in table[DEPTHS[0]]:
                    vals = [table[L][key] for L in DEPTHS]
                    n_const += 1
                    if not all(math.isfinite(v) for v in vals):
                        bad.append(f"n={n} {name} {kind} {key} not finite")
                        continue
                    s = _spread(vals)
                    if s > worst:
                        worst, worst_at = s, f"n={n} {name} {kind} {key}"
                    if s > 2.0:
                        bad.append(f"n={n} {name} {kind} {key} spread {s:.3g} {vals}")
                    if key == "lem8.15" and max(vals) > 4.0:
                        bad.append(f"n={n} {name} {kind} lem8.15 = {max(vals):.3g} exceeds 4")
    ok = not bad
    record(
        "criterion 2 (depth-stable constants)",
        ok,
        f"{n_const} constant series over L={DEPTHS}, worst spread {worst:.3f} at {worst_at}, {time.time() - t0:.0f}s",
    )
    assert ok, bad


# -- criterion 3 ---------------------------------------------------------------------


def test_criterion3_stopping_time(record):
    rng = np.random.default_rng(31)
    fails, n_cfg, n_with_bad = [], 0, 0
    min_eps = 1.0
    for delta in (0.1, 0.25, 0.5):
        for factor in (1.05, 1.5, 3.0, 8.0):
            for n, L in ((1, 6), (2, 4)):
                spec = GridSpec(n, L)
                name = "truncated_hilbert" if n == 1 else "truncated_riesz"
                T = operator(name, {"tau": 2.0**-5}, spec)
                sys = perturbed_system(spec, int(rng.integers(1 << 30)), float(rng.choice([0.5, 0.75, 0.9])), theta_max=0.5)
                Q1 = spec.root()
                b = sys.b(Q1)
                p, _ = auto_params(b, T, Q1, delta, factor)
                d = decompose(Q1, b, T, p)
                r = verify_lemma818(d, b, T, sys)
                n_cfg += 1
                n_with_bad += bool(d.bad)
                min_eps = min(min_eps, r["eps_realized"])
                tag = f"n={n} delta={delta} factor={factor}"
                if not d.bad_measure() < Q1.measure:
                    fails.append(f"{tag}: sum |P_j| = |Q1|")
                if not r["eq8.23"]["ok"]:
                    fails.append(f"{tag}: buffer bound {r['eq8.23']}")
                if not d.partition_ok():
                    fails.append(f"{tag}: partition")
                if not (r["sound"] and r["maximal"]):
                    fails.append(f"{tag}: stopping rule not sound/maximal")

    # two-value b: 3/2 on [0,1/2), 1/2 on [1/2,1), zero kernel, delta 0.6
    spec = GridSpec(1, 3)
    vals = np.where(np.arange(8) < 4, 1.5, 0.5).tolist()
    sys = table_system({"0:0": [[v, 0] for v in vals]}, spec)
    T = operator("zero", {}, spec)
    d = decompose(spec.root(), sys.b(spec.root()), T, StoppingParams(delta=0.6, c_thr=1e6))
    left = parse_cube("1:0")
    left_good = all(d.region_of(Q) != "bad" for Q in spec.all_cubes() if left.contains(Q))
    two_value = [format_cube(P) for P in d.bad] == ["1:1"] and left_good
    if not two_value:
        fails.append(f"two-value example gave bad = {[format_cube(P) for P in d.bad]}")

    ok = not fails and n_cfg >= 20
    record(
        "criterion 3 (stopping time)",
        ok,
        f"{n_cfg} configs ({n_with_bad} with stopped cubes), min realized eps {min_eps:.4f}, two-value P_1 = 1:1: {two_value}",
    )
    assert ok, fails


# -- criterion 4 ---------------------------------------------------------------------


@pytest.mark.slow
def test_criterion4_bootstrap_tau_sweep(record):
    t0 = time.time()
    base = load_config(CONFIGS / "hilbert_tau_sweep.json")
    taus = base.sweep["values"]
    fails, lines = [], []
    worst_spread = 1.0
    for label, systems in (
        ("constant", {"side1": {"kind": "constant"}, "side2": {"kind": "constant"}}),
        ("perturbed", base.systems),
    ):
        B1s = []
        for tau in taus:
            cfg = base.replace(
                kernels=[{**base.kernel, "params": {"tau": tau}}],
                systems=systems,
                q1_generations=[0, 1, 2],
                sweep=None,
            )
            rep = run_full_verification(cfg)
            B1s.append(rep.B1)
            m = rep.details["bootstrap"]["merged"]
            if not rep.checks["bootstrap"]["passed"]:
                fails.append(f"{label} tau={tau}: {rep.checks['bootstrap']['failures']}")
            if not (m["triangle_ok"] and m["bootstrap_ok"]):
                fails.append(f"{label} tau={tau}: triangle {m['triangle_ok']} bootstrap {m['bootstrap_ok']}")
            if not rep.eps > 0:
                fails.append(f"{label} tau={tau}: realized eps {rep.eps}")
        med = statistics.median(B1s)
        spread = max(max(B1s) / med, med / min(B1s))
        worst_spread = max(worst_spread, spread)
        lines.append(f"{label} B1 {min(B1s):.3f}..{max(B1s):.3f}")
        if spread > 2.0:
            fails.append(f"{label}: B1 spread {spread:.3f} about the median")
    ok = not fails
    record(
        "criterion 4 (bootstrap, tau sweep)",
        ok,
        f"{'; '.join(lines)}; worst factor to median {worst_spread:.3f}, {time.time() - t0:.0f}s",
    )
    assert ok, fails


# -- criterion 5 ---------------------------------------------------------------------


def test_criterion5_oracle_golden(record):
    files = sorted(GOLDEN.glob("golden_*.json"))
    worst, worst_at, fails = 0.0, "", []
    for path in files:
        rec = json.loads(path.read_text())
        for key, v in compare_golden(rec).items():
            if v > worst:
                worst, worst_at = v, f"{path.name}:{key}"
            if not v <= GOLDEN_TOLERANCE:
                fails.append(f"{path.name}:{key} {v:.3e}")
    # committed records must still match a fresh oracle run
    for path in files:
        rec = json.loads(path.read_text())
        if rec["grid"]["n"] != 1:
            continue
        fresh = golden_record(rec["kernel"], GridSpec(1, rec["grid"]["L"]), rec["seed"])
        if json.loads(json.dumps(fresh)) != rec:
            fails.append(f"{path.name} is stale")
    ok = bool(files) and not fails
    record(
        "criterion 5 (oracle equivalence)",
        ok,
        f"{len(files)} golden files, worst deviation {worst:.2e} at {worst_at} (tol {GOLDEN_TOLERANCE:g})",
    )
    assert ok, fails


# -- criterion 6 ---------------------------------------------------------------------


def test_criterion6_determinism(record, tmp_path):
    cfg = CONFIGS / "hilbert_n1_L6.json"
    outs = []
    for i, jobs in enumerate(("1", "1", "3")):
        out = tmp_path / f"run{i}"
        assert cli_main(["verify", "--config", str(cfg), "--out", str(out), "--jobs", jobs]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    same = outs[0] == outs[1]
    same_jobs = outs[0] == outs[2]
    ok = same and same_jobs and {"report.json", "report.csv", "constants.csv"} <= set(outs[0])
    record(
        "criterion 6 (determinism)",
        ok,
        f"{len(outs[0])} files byte-identical across two runs: {same}; with 3 workers: {same_jobs}",
    )
    assert ok
