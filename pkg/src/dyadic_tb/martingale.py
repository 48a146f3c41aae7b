"""Dyadic conditional expectations, martingale differences and related functionals.

On the finite tree the telescoping sum stops at the root, so the reproducing
formula reads ``E_0 f + sum_{k<L} Delta_k f = f`` and the square function
identity carries the extra ``||E_0 f||^2`` term.
"""
from __future__ import annotations

import numpy as np

from .errors import DyadicError
from .grid import DyadicCube, GridSpec, block_mean, block_sum, cond_exp, expand, neighbor_offsets
from .gridfunc import GridFunction, l2_sq


def _check_level(spec: GridSpec, k: int, upper: int):
    if not 0 <= k <= upper:
        raise DyadicError(f"generation {k} outside [0, {upper}]")


def expectation(f: GridFunction, k: int) -> GridFunction:
    _check_level(f.spec, k, f.spec.L)
    return GridFunction(f.spec, cond_exp(f.values, f.spec, k))


def difference(f: GridFunction, k: int) -> GridFunction:
    _check_level(f.spec, k, f.spec.L - 1)
    v = cond_exp(f.values, f.spec, k + 1) - cond_exp(f.values, f.spec, k)
    return GridFunction(f.spec, v)


def difference_array(values: np.ndarray, spec: GridSpec, k: int) -> np.ndarray:
    return cond_exp(values, spec, k + 1) - cond_exp(values, spec, k)


def square_function(f: GridFunction) -> tuple[float, list[float]]:
    """``sum_k ||Delta_k f||^2`` and its per-generation terms."""
    per_k = [l2_sq(difference_array(f.values, f.spec, k), f.spec) for k in range(f.spec.L)]
    return float(sum(per_k)), per_k


def _energy_from(values: np.ndarray, spec: GridSpec) -> list[np.ndarray]:
    """``tail[k]`` = pointwise ``sum_{j>=k} |Delta_j h|^2``, for k = 0..L."""
    tail = [None] * (spec.L + 1)
    acc = np.zeros(spec.shape)
    tail[spec.L] = acc.copy()
    for j in range(spec.L - 1, -1, -1):
        acc = acc + np.abs(difference_array(values, spec, j)) ** 2
        tail[j] = acc.copy()
    return tail


def carleson_functional(h: GridFunction, Q: DyadicCube) -> float:
    """``|Q|^-1 sum_{Q' in Q} ||Delta_{Q'} h||^2``."""
    if not Q.is_interior:
        raise DyadicError(f"{Q} is not inside the root")
    tail = _energy_from(h.values, h.spec)
    return float(tail[Q.k][Q.slices(h.spec)].mean())


def carleson_table(h: GridFunction) -> list[np.ndarray]:
    """Carleson functional for every cube, one array per generation."""
    tail = _energy_from(h.values, h.spec)
    return [block_mean(tail[k], h.spec, k) for k in range(h.spec.L + 1)]


def carleson_norm(h: GridFunction) -> float:
    return float(max(t.max() for t in carleson_table(h)))


def dyadic_bmo_norm(h: GridFunction) -> float:
    """``sup_Q ([|h - [h]_Q|^2]_Q)^{1/2}`` over all dyadic cubes."""
    spec = h.spec
    best = 0.0
    sq = np.abs(h.values) ** 2
    for k in range(spec.L + 1):
        m2 = block_mean(sq, spec, k)
        m1 = block_mean(h.values, spec, k)
        var = np.maximum(m2 - np.abs(m1) ** 2, 0.0)
        best = max(best, float(var.max()))
    return best ** 0.5


def _shifted_level_means(values: np.ndarray, spec: GridSpec, k: int, offset) -> np.ndarray:
    """Averages over ``Q + offset`` for every Q in generation k; zero outside the root."""
    A = block_mean(values, spec, k)
    g = 1 << k
    out = np.zeros_like(A)
    src = []
    dst = []
    for o in offset:
        if abs(o) >= g:
            return out
        src.append(slice(max(o, 0), g + min(o, 0)))
        dst.append(slice(max(-o, 0), g - max(o, 0)))
    out[tuple(dst)] = A[tuple(src)]
    return out


def neighbor_difference_level(f: GridFunction, k: int, m: int) -> GridFunction:
    """``[f]_Q - [f]_{Q^m}`` on every Q of generation k."""
    spec = f.spec
    offs = neighbor_offsets(spec.n)
    if not 1 <= m <= len(offs):
        raise DyadicError(f"neighbor index must lie in [1, {len(offs)}]")
    _check_level(spec, k, spec.L)
    A = block_mean(f.values, spec, k)
    B = _shifted_level_means(f.values, spec, k, offs[m - 1])
    return GridFunction(spec, expand(A - B, spec, k))


def neighbor_difference(f: GridFunction, Q: DyadicCube, m: int) -> GridFunction:
    return neighbor_difference_level(f, Q.k, m).restrict(Q)


def neighbor_square_sum(f: GridFunction, m: int) -> float:
    """``sum over all dyadic Q of ||neighbor_difference(f, Q, m)||^2``."""
    return float(
        sum(l2_sq(neighbor_difference_level(f, k, m).values, f.spec) for k in range(f.spec.L + 1))
    )


def carleson_sup(energy: dict[int, np.ndarray], spec: GridSpec, top: DyadicCube) -> tuple[float, DyadicCube]:
    """``sup_{Q~ in R_top} |Q~|^-1 sum_{k >= gen(Q~)} sum_{cells of Q~} energy[k]``.

    ``energy[k]`` is a finest-grid array holding the (volume-weighted)
    contribution of the generation-k cubes; the sup runs over dyadic Q~ inside
    ``top`` and the argmax is returned with it.
    """
    best, arg = 0.0, top
    for m in range(top.k, spec.L + 1):
        acc = np.zeros((1 << m,) * spec.n)
        for k, e in energy.items():
            if k >= m:
                acc += block_sum(e, spec, m)
        ratio = acc / (2.0 ** (-spec.n * m))
        shift = m - top.k
        lo = [i << shift for i in top.idx]
        sub = ratio[tuple(slice(a, a + (1 << shift)) for a in lo)]
        i = np.unravel_index(int(np.argmax(sub)), sub.shape)
        if sub[i] > best:
            best, arg = float(sub[i]), DyadicCube(m, tuple(a + j for a, j in zip(lo, i)))
    return best, arg
