"""Randomized checks of the exact identities of the martingale machinery.

Each check draws ``trials`` random inputs and returns the largest deviation
found; every one of them is an algebraic identity on the grid, so the expected
value is rounding error. ``grid_check`` runs the whole registry.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .adapted import A_b, AdaptedSystem, D_b, Delta_b, E_b, Lambda_b
from .grid import DyadicCube, GridSpec, cond_exp, dyadic_ancestor
from .gridfunc import GridFunction
from .martingale import difference_array


def _rand(spec: GridSpec, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
    shape = spec.shape + ((batch,) if batch else ())
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_testing_function(spec: GridSpec, rng: np.random.Generator, amplitude: float = 0.5) -> np.ndarray:
    """Cellwise ``1 + a w e^{i phi}`` with ``|w| <= 1``: every block average stays away from zero."""
    w = rng.uniform(-1, 1, spec.shape) * np.exp(1j * rng.uniform(-0.5, 0.5, spec.shape))
    return 1.0 + amplitude * w


def _levels(spec: GridSpec, rng: np.random.Generator) -> tuple[int, int]:
    j, k = rng.integers(0, spec.L, size=2)
    return int(j), int(k)


def tower(spec, rng, trials):
    err = 0.0
    for _ in range(trials):
        f = _rand(spec, rng)
        j, k = sorted(rng.integers(0, spec.L + 1, size=2))[::-1]
        err = max(err, np.abs(cond_exp(cond_exp(f, spec, k), spec, j) - cond_exp(f, spec, k)).max())
        err = max(err, np.abs(cond_exp(cond_exp(f, spec, j), spec, k) - cond_exp(f, spec, k)).max())
    return float(err)


def delta_orthogonal(spec, rng, trials):
    err = 0.0
    for _ in range(trials):
        f = _rand(spec, rng)
        j, k = _levels(spec, rng)
        if j == k:
            k = (k + 1) % spec.L if spec.L > 1 else k
        if j == k:
            continue
        err = max(err, np.abs(difference_array(difference_array(f, spec, k), spec, j)).max())
    return float(err)


def delta_idempotent(spec, rng, trials):
    err = 0.0
    for _ in range(trials):
        f = _rand(spec, rng)
        k = int(rng.integers(0, spec.L))
        d = difference_array(f, spec, k)
        err = max(err, np.abs(difference_array(d, spec, k) - d).max())
    return float(err)


def square_function(spec, rng, trials):
    err = 0.0
    for _ in range(trials):
        f = _rand(spec, rng)
        tot = np.sum(np.abs(cond_exp(f, spec, 0)) ** 2)
        for k in range(spec.L):
            tot += np.sum(np.abs(difference_array(f, spec, k)) ** 2)
        ref = np.sum(np.abs(f) ** 2)
        err = max(err, abs(tot - ref) / ref)
    return float(err)


def reproducing(spec, rng, trials):
    err = 0.0
    for _ in range(trials):
        f = _rand(spec, rng)
        g = cond_exp(f, spec, 0) + sum(difference_array(f, spec, k) for k in range(spec.L))
        err = max(err, np.abs(g - f).max())
    return float(err)


def _adapted(spec, rng):
    return AdaptedSystem(GridFunction(spec, random_testing_function(spec, rng)))


def adapted_tower(spec, rng, trials):
    err = 0.0
    for _ in range(trials):
        a = _adapted(spec, rng)
        f = _rand(spec, rng)
        j, k = sorted(rng.integers(0, spec.L + 1, size=2))[::-1]
        ek = E_b(f, a, k)
        err = max(err, np.abs(E_b(E_b(f, a, j), a, k) - ek).max(), np.abs(E_b(ek, a, j) - ek).max())
    return float(err)


def adapted_orthogonal(spec, rng, trials):
    err = 0.0
    for _ in range(trials):
        a = _adapted(spec, rng)
        f = _rand(spec, rng)
        j, k = _levels(spec, rng)
        if j == k:
            continue
        err = max(err, np.abs(Delta_b(Delta_b(f, a, k), a, j)).max())
    return float(err)


def adapted_idempotent(spec, rng, trials):
    err = 0.0
    for _ in range(trials):
        a = _adapted(spec, rng)
        f = _rand(spec, rng)
        k = int(rng.integers(0, spec.L))
        d = Delta_b(f, a, k)
        err = max(err, np.abs(Delta_b(d, a, k) - d).max())
        dd = D_b(f, a, k)
        err = max(err, np.abs(D_b(dd, a, k) - dd).max())
    return float(err)


def adapted_reproducing(spec, rng, trials):
    err = 0.0
    for _ in range(trials):
        a = _adapted(spec, rng)
        f = _rand(spec, rng)
        g = E_b(f, a, 0) + sum(Delta_b(f, a, k) for k in range(spec.L))
        h = E_b(f, a, 0) + sum(Delta_b(Delta_b(f, a, k), a, k) for k in range(spec.L))
        r = A_b(f, a, 0) + sum(D_b(f, a, k) for k in range(spec.L))
        err = max(err, np.abs(g - f).max(), np.abs(h - f).max(), np.abs(r - f).max())
    return float(err)


def adapted_transpose(spec, rng, trials):
    """``<E^b_k f, g> = <f, A^b_k g>`` and ``<Delta^b_k f, g> = <f, D^b_k g>`` (bilinear)."""
    err = 0.0
    for _ in range(trials):
        a = _adapted(spec, rng)
        f, g = _rand(spec, rng), _rand(spec, rng)
        k = int(rng.integers(0, spec.L))
        scale = np.sqrt(np.sum(np.abs(f) ** 2) * np.sum(np.abs(g) ** 2))
        err = max(
            err,
            abs(np.sum(E_b(f, a, k) * g) - np.sum(f * A_b(g, a, k))) / scale,
            abs(np.sum(Delta_b(f, a, k) * g) - np.sum(f * D_b(g, a, k))) / scale,
        )
    return float(err)


def lambda_identity(spec, rng, trials):
    err = 0.0
    for _ in range(trials):
        a = _adapted(spec, rng)
        g = _rand(spec, rng)
        k = int(rng.integers(0, spec.L))
        err = max(err, np.abs(Lambda_b(a.b.values * g, a, k) - Delta_b(g, a, k)).max())
    return float(err)


def telescoping(spec, rng, trials):
    """``E_k b = sum_{l=1}^{i} Delta_{k-l} b + E_{k-i} b`` and its pointwise form on a cube."""
    err = 0.0
    for _ in range(trials):
        b = _rand(spec, rng)
        k = int(rng.integers(0, spec.L + 1))
        acc = np.zeros(spec.shape, dtype=complex)
        for i in range(1, k + 1):
            acc = acc + difference_array(b, spec, k - i)
            err = max(err, np.abs(cond_exp(b, spec, k) - acc - cond_exp(b, spec, k - i)).max())
        if k >= 1:
            idx = tuple(int(x) for x in rng.integers(0, 1 << k, size=spec.n))
            Q = DyadicCube(k, idx)
            sl = Q.slices(spec)
            i = int(rng.integers(1, k + 1))
            acc = sum(difference_array(b, spec, k - l) for l in range(1, i + 1))
            anc = dyadic_ancestor(Q, i)
            err = max(err, np.abs(b[sl].mean() - acc[sl] - b[anc.slices(spec)].mean()).max())
    return float(err)


# name -> (report tag, check)
REGISTRY: dict[str, tuple[str, Callable]] = {
    "tower": ("eq8.1", tower),
    "delta_orthogonal": ("eq8.1", delta_orthogonal),
    "delta_idempotent": ("eq8.1", delta_idempotent),
    "square_function": ("eq8.2", square_function),
    "reproducing": ("eq8.3", reproducing),
    "adapted_tower": ("eq8.9a", adapted_tower),
    "adapted_orthogonal": ("eq8.9b", adapted_orthogonal),
    "adapted_idempotent": ("eq8.9c", adapted_idempotent),
    "adapted_reproducing": ("eq8.9f", adapted_reproducing),
    "adapted_transpose": ("p8.10", adapted_transpose),
    "lambda_identity": ("eq8.44", lambda_identity),
    "telescoping": ("eq8.46", telescoping),
}


def grid_check(spec: GridSpec, rng: np.random.Generator, trials: int = 50, tol: float = 1e-10) -> list[dict]:
    rows = []
    for name, (tag, fn) in REGISTRY.items():
        err = fn(spec, rng, trials)
        rows.append({"tag": tag, "metric": name, "value": err, "passed": bool(err <= tol)})
    return rows
