"""b-adapted martingale operators and their transposes.

For a testing function ``b`` with averages bounded away from zero,

    E^b_k f = E_k(f b) / E_k b,      Delta^b_k = E^b_{k+1} - E^b_k,
    A^b_k f = b E_k f / E_k b,        D^b_k     = A^b_{k+1} - A^b_k,

and ``Lambda^b_Q`` is the operator with ``Lambda^b_Q(b g) = Delta^b_Q g``.
All operators are evaluated level-wise with block averages. A cube whose
b-average falls below ``floor`` is an error unless the caller asks for the
non-strict variant, in which case the offending cells are zeroed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AccretivityViolation, DyadicError
from .grid import DyadicCube, GridSpec, block_mean, children, cond_exp, expand, level_masks
from .gridfunc import GridFunction, l2_sq
from .martingale import carleson_sup

NUMERICAL_FLOOR = 1e-10


@dataclass(frozen=True)
class AccretivityParams:
    delta: float = 0.25
    q: float = 4.0
    C0: float = 16.0

    def __post_init__(self):
        if not (self.delta > 0 and self.delta <= 1 <= self.C0 and self.q > 2):
            raise DyadicError("need 0 < delta <= 1 <= C0 and q > 2")


@dataclass(eq=False)
class AdaptedSystem:
    b: GridFunction
    params: AccretivityParams = field(default_factory=AccretivityParams)
    good_set: frozenset | None = None
    floor: float = NUMERICAL_FLOOR

    def __post_init__(self):
        self._means: dict[int, np.ndarray] = {}

    @property
    def spec(self) -> GridSpec:
        return self.b.spec

    def level_means(self, k: int) -> np.ndarray:
        if k not in self._means:
            self._means[k] = block_mean(self.b.values, self.spec, k)
        return self._means[k]

    def inverse_level(self, k: int, strict: bool = True) -> np.ndarray:
        """``1 / E_k b`` on the finest grid; zeros where the floor fails (non-strict)."""
        m = self.level_means(k)
        bad = np.abs(m) < self.floor
        if strict and bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise AccretivityViolation(DyadicCube(k, idx), complex(m[idx]))
        inv = np.where(bad, 0.0, 1.0 / np.where(bad, 1.0, m))
        return expand(inv, self.spec, k)

    def check_cube(self, Q: DyadicCube, with_children: bool = False):
        cubes = [Q] + (children(Q, self.spec) if with_children and Q.k < self.spec.L else [])
        for P in cubes:
            v = self.level_means(P.k)[P.idx]
            if abs(v) < self.floor:
                raise AccretivityViolation(P, complex(v))

    def violations(self) -> list[tuple[DyadicCube, str, float]]:
        """Cubes of ``good_set`` breaking ``|[b]_Q| >= delta`` or ``[|b|^q]_Q <= C0``."""
        out = []
        if not self.good_set:
            return out
        p = self.params
        absq = np.abs(self.b.values) ** p.q
        for Q in sorted(self.good_set):
            avg = abs(self.level_means(Q.k)[Q.idx])
            if avg < p.delta:
                out.append((Q, "accretivity", avg))
            mq = float(absq[Q.slices(self.spec)].mean())
            if mq > p.C0:
                out.append((Q, "lq_bound", mq))
        return out


def _bc(arr: np.ndarray, like: np.ndarray) -> np.ndarray:
    return arr.reshape(arr.shape + (1,) * (like.ndim - arr.ndim))


# -- array-level operators (support a trailing batch axis) --------------------


def E_b(values: np.ndarray, sys: AdaptedSystem, k: int, strict: bool = True) -> np.ndarray:
    spec = sys.spec
    b = sys.b.values
    return cond_exp(values * _bc(b, values), spec, k) * _bc(sys.inverse_level(k, strict), values)


def A_b(values: np.ndarray, sys: AdaptedSystem, k: int, strict: bool = True) -> np.ndarray:
    spec = sys.spec
    coef = sys.b.values * sys.inverse_level(k, strict)
    return cond_exp(values, spec, k) * _bc(coef, values)


def Delta_b(values, sys, k, strict=True):
    return E_b(values, sys, k + 1, strict) - E_b(values, sys, k, strict)


def D_b(values, sys, k, strict=True):
    return A_b(values, sys, k + 1, strict) - A_b(values, sys, k, strict)


def Lambda_b(values, sys, k, strict=True):
    spec = sys.spec
    return cond_exp(values, spec, k + 1) * _bc(sys.inverse_level(k + 1, strict), values) - cond_exp(
        values, spec, k
    ) * _bc(sys.inverse_level(k, strict), values)


def _check_k(sys: AdaptedSystem, k: int, upper: int):
    if not 0 <= k <= upper:
        raise DyadicError(f"generation {k} outside [0, {upper}]")


# -- public GridFunction API --------------------------------------------------


def adapted_expectation(f: GridFunction, sys: AdaptedSystem, k: int) -> GridFunction:
    _check_k(sys, k, sys.spec.L)
    return GridFunction(f.spec, E_b(f.values, sys, k))


def adapted_difference(f: GridFunction, sys: AdaptedSystem, k: int) -> GridFunction:
    _check_k(sys, k, sys.spec.L - 1)
    return GridFunction(f.spec, Delta_b(f.values, sys, k))


def transpose_expectation(f: GridFunction, sys: AdaptedSystem, k: int) -> GridFunction:
    _check_k(sys, k, sys.spec.L)
    return GridFunction(f.spec, A_b(f.values, sys, k))


def transpose_difference(f: GridFunction, sys: AdaptedSystem, k: int) -> GridFunction:
    _check_k(sys, k, sys.spec.L - 1)
    return GridFunction(f.spec, D_b(f.values, sys, k))


_LOCAL_OPS = {
    "E": (E_b, False),
    "A": (A_b, False),
    "Delta": (Delta_b, True),
    "D": (D_b, True),
    "Lambda": (Lambda_b, True),
}


def localized(op: str, f: GridFunction, sys: AdaptedSystem, Q: DyadicCube) -> GridFunction:
    """``1_Q`` times the generation-``Q.k`` operator ``op`` in {E, A, Delta, D, Lambda}."""
    try:
        fn, needs_children = _LOCAL_OPS[op]
    except KeyError:
        raise DyadicError(f"unknown adapted operator {op!r}") from None
    if needs_children and Q.k >= sys.spec.L:
        raise DyadicError(f"{op}_Q needs children of {Q}")
    sys.check_cube(Q, with_children=needs_children)
    out = fn(f.values, sys, Q.k, strict=False)
    return GridFunction(f.spec, np.where(Q.mask(f.spec), out, 0))


def lambda_apply(g: GridFunction, sys: AdaptedSystem, Q: DyadicCube) -> GridFunction:
    return localized("Lambda", g, sys, Q)


def lambda_kernel(sys: AdaptedSystem, Q: DyadicCube) -> np.ndarray:
    """Dense ``lambda^b_Q(x, y)`` on finest cells (flat order), from its defining formula."""
    spec = sys.spec
    sys.check_cube(Q, with_children=True)
    N = spec.ncells
    K = np.zeros((N, N), dtype=complex)
    for P in children(Q, spec):
        cells = P.flat_cells(spec)
        K[np.ix_(cells, cells)] += 1.0 / (sys.level_means(P.k)[P.idx] * P.measure)
    cells = Q.flat_cells(spec)
    K[np.ix_(cells, cells)] -= 1.0 / (sys.level_means(Q.k)[Q.idx] * Q.measure)
    return K


# -- square-function sums ------------------------------------------------------


def delta_square_sum(f: GridFunction, sys: AdaptedSystem) -> float:
    return float(sum(l2_sq(Delta_b(f.values, sys, k), f.spec) for k in range(sys.spec.L)))


def D_square_sum(f: GridFunction, sys: AdaptedSystem) -> float:
    return float(sum(l2_sq(D_b(f.values, sys, k), f.spec) for k in range(sys.spec.L)))


def localized_square_sum(op: str, f: GridFunction, sys: AdaptedSystem, cubes) -> float:
    """``sum_{Q in cubes} ||op_Q f||^2`` computed level by level."""
    fn, needs_children = _LOCAL_OPS[op]
    total = 0.0
    cubes = list(cubes)
    for Q in cubes:
        sys.check_cube(Q, with_children=needs_children)
    for k, mask in level_masks(cubes, sys.spec).items():
        total += l2_sq(np.where(mask, fn(f.values, sys, k, strict=False), 0), f.spec)
    return total


def lemma815_sup(b: GridFunction, omega1, top: DyadicCube) -> tuple[float, DyadicCube]:
    """``sup_{Q~ in top} |Q~|^-1 sum_{Q in omega1, Q in Q~} ||Delta_Q b||^2`` and its argmax."""
    spec = b.spec
    energy = {}
    for k, mask in level_masks(omega1, spec).items():
        e = np.abs(np.where(mask, cond_exp(b.values, spec, k + 1) - cond_exp(b.values, spec, k), 0)) ** 2
        energy[k] = e * spec.cell_volume
    return carleson_sup(energy, spec, top)
