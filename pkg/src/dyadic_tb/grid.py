"""Finite dyadic tree over the root cube [0,1)^n.

Cubes are addressed by ``(generation, index)``; a generation-k cube has side
``2**-k``. Indices outside ``[0, 2**k)`` are allowed for geometry (neighbors,
dilates) and carry no function mass. Grid functions live on the finest
generation ``L`` and are stored as arrays of shape ``(2**L,) * n`` in C order.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import AncestorAboveRootError, DyadicError, GenerationOverflowError

MAX_DEPTH = 10
DILATE_FACTORS = (2, 3, 6)


@dataclass(frozen=True)
class GridSpec:
    n: int
    L: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise DyadicError(f"dimension must be 1 or 2, got {self.n}")
        if not 1 <= self.L <= MAX_DEPTH:
            raise DyadicError(f"depth must lie in [1, {MAX_DEPTH}], got {self.L}")

    @property
    def side(self) -> int:
        return 1 << self.L

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.n

    @property
    def ncells(self) -> int:
        return self.side ** self.n

    @property
    def cell_volume(self) -> float:
        return 2.0 ** (-self.n * self.L)

    def root(self) -> "DyadicCube":
        return DyadicCube(0, (0,) * self.n)

    def cubes(self, k: int) -> list["DyadicCube"]:
        """All generation-k cubes inside the root, index-lexicographic."""
        return [DyadicCube(k, idx) for idx in itertools.product(range(1 << k), repeat=self.n)]

    def all_cubes(self) -> list["DyadicCube"]:
        return [Q for k in range(self.L + 1) for Q in self.cubes(k)]

    def cell_centers(self) -> np.ndarray:
        """Midpoints of the finest cells, shape ``(ncells, n)`` in flat order."""
        h = 1.0 / self.side
        axes = [(np.arange(self.side) + 0.5) * h] * self.n
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def to_dict(self) -> dict:
        return {"n": self.n, "L": self.L}


@dataclass(frozen=True, order=True)
class DyadicCube:
    k: int
    idx: tuple[int, ...]

    def __post_init__(self):
        if self.k < 0:
            raise DyadicError("generation must be non-negative")
        object.__setattr__(self, "idx", tuple(int(i) for i in self.idx))

    @property
    def n(self) -> int:
        return len(self.idx)

    @property
    def side_length(self) -> float:
        return 2.0 ** (-self.k)

    @property
    def measure(self) -> float:
        return 2.0 ** (-self.n * self.k)

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.idx, dtype=float) + 0.5) * self.side_length

    @property
    def is_interior(self) -> bool:
        return all(0 <= i < (1 << self.k) for i in self.idx)

    def contains(self, other: "DyadicCube") -> bool:
        """True when ``other`` is a (not necessarily strict) dyadic subcube."""
        if other.k < self.k:
            return False
        shift = other.k - self.k
        return all((j >> shift) == i for i, j in zip(self.idx, other.idx))

    def cell_box(self, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
        """Half-open finest-cell index box ``[lo, hi)`` covered by the cube."""
        s = 1 << (spec.L - self.k)
        lo = np.asarray(self.idx) * s
        return lo, lo + s

    def slices(self, spec: GridSpec) -> tuple[slice, ...]:
        if self.k > spec.L:
            raise GenerationOverflowError(f"{self} is finer than depth {spec.L}")
        s = 1 << (spec.L - self.k)
        return tuple(slice(i * s, (i + 1) * s) for i in self.idx)

    def mask(self, spec: GridSpec) -> np.ndarray:
        m = np.zeros(spec.shape, dtype=bool)
        if self.is_interior:
            m[self.slices(spec)] = True
        return m

    def flat_cells(self, spec: GridSpec) -> np.ndarray:
        return np.flatnonzero(self.mask(spec))

    def __str__(self) -> str:
        return format_cube(self)


def format_cube(Q: DyadicCube) -> str:
    return f"{Q.k}:" + ",".join(str(i) for i in Q.idx)


def parse_cube(text: str) -> DyadicCube:
    """Parse the ``"k:idx0,idx1"`` literal, e.g. ``"3:5"`` or ``"2:3,1"``."""
    try:
        k, rest = text.strip().split(":")
        idx = tuple(int(t) for t in rest.split(","))
        return DyadicCube(int(k), idx)
    except ValueError as exc:
        raise DyadicError(f"bad cube literal {text!r}") from exc


def cube_sort_key(Q: DyadicCube):
    return (Q.k, Q.idx)


def children(Q: DyadicCube, spec: GridSpec) -> list[DyadicCube]:
    """The ``2**n`` children, first coordinate varying fastest."""
    if Q.k >= spec.L:
        raise GenerationOverflowError(f"{Q} is at the finest generation {spec.L}")
    out = []
    for offs in itertools.product((0, 1), repeat=Q.n):
        offs = offs[::-1]
        out.append(DyadicCube(Q.k + 1, tuple(2 * i + o for i, o in zip(Q.idx, offs))))
    return out


def dyadic_ancestor(Q: DyadicCube, i: int) -> DyadicCube:
    if i < 0:
        raise DyadicError("ancestor order must be non-negative")
    if i > Q.k:
        raise AncestorAboveRootError(f"{Q} has no ancestor of order {i}")
    return DyadicCube(Q.k - i, tuple(j >> i for j in Q.idx))


def parent(Q: DyadicCube) -> DyadicCube:
    return dyadic_ancestor(Q, 1)


def neighbor_offsets(n: int) -> list[tuple[int, ...]]:
    """Canonical offsets in ``{-1,0,1}^n minus 0``; position ``m-1`` is neighbor ``m``."""
    return [o for o in itertools.product((-1, 0, 1), repeat=n) if any(o)]


def neighbors(Q: DyadicCube) -> list[DyadicCube]:
    return [DyadicCube(Q.k, tuple(i + o for i, o in zip(Q.idx, off))) for off in neighbor_offsets(Q.n)]


@dataclass(frozen=True)
class Region:
    """A set of finest cells of the extended grid.

    ``mask`` marks the cells inside the root; ``n_exterior`` counts cells that
    fall outside it (geometry only, zero mass).
    """

    spec: GridSpec
    mask: np.ndarray = field(repr=False)
    n_exterior: int = 0

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != self.spec.shape:
            raise DyadicError("region mask has the wrong shape")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @classmethod
    def from_box(cls, spec: GridSpec, lo, hi) -> "Region":
        lo = np.asarray(lo, dtype=int)
        hi = np.asarray(hi, dtype=int)
        clo = np.clip(lo, 0, spec.side)
        chi = np.clip(hi, 0, spec.side)
        m = np.zeros(spec.shape, dtype=bool)
        m[tuple(slice(a, b) for a, b in zip(clo, chi))] = True
        total = int(np.prod(hi - lo))
        return cls(spec, m, total - int(m.sum()))

    @classmethod
    def from_cube(cls, spec: GridSpec, Q: DyadicCube) -> "Region":
        lo, hi = Q.cell_box(spec)
        return cls.from_box(spec, lo, hi)

    @classmethod
    def root(cls, spec: GridSpec) -> "Region":
        return cls(spec, np.ones(spec.shape, dtype=bool))

    @cached_property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def measure(self) -> float:
        """Measure of the part inside the root."""
        return self.count * self.spec.cell_volume

    @property
    def total_measure(self) -> float:
        return (self.count + self.n_exterior) * self.spec.cell_volume

    def indicator(self) -> np.ndarray:
        return self.mask.astype(float)

    def __sub__(self, other: "Region") -> "Region":
        # exterior bookkeeping is not tracked through set algebra
        return Region(self.spec, self.mask & ~other.mask)

    def __and__(self, other: "Region") -> "Region":
        return Region(self.spec, self.mask & other.mask)

    def __or__(self, other: "Region") -> "Region":
        return Region(self.spec, self.mask | other.mask)

    def __eq__(self, other):
        return (
            isinstance(other, Region)
            and self.spec == other.spec
            and np.array_equal(self.mask, other.mask)
        )

    def __hash__(self):
        return hash((self.spec, self.mask.tobytes()))


def dilate_box(Q: DyadicCube, factor: float, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Smallest finest-cell box covering the concentric dilate of ``Q``.

    Exact whenever ``(factor - 1) * side / 2`` is a whole number of cells.
    """
    s = 1 << (spec.L - Q.k)
    ext = math.ceil((factor - 1) * s / 2 - 1e-12)
    lo, hi = Q.cell_box(spec)
    return lo - ext, hi + ext


def concentric_dilate(Q: DyadicCube, factor: float, spec: GridSpec) -> Region:
    if factor not in DILATE_FACTORS:
        raise DyadicError(f"dilation factor must be one of {DILATE_FACTORS}")
    lo, hi = dilate_box(Q, factor, spec)
    return Region.from_box(spec, lo, hi)


# ---------------------------------------------------------------------------
# level-wise block helpers (hot paths for every martingale operator)


def _interleaved(spec: GridSpec, k: int) -> tuple[int, ...]:
    s = 1 << (spec.L - k)
    return tuple(x for _ in range(spec.n) for x in (1 << k, s))


def block_sum(arr: np.ndarray, spec: GridSpec, k: int) -> np.ndarray:
    """Sum over each generation-k cube; result has shape ``(2**k,) * n`` (+ batch).

    Trailing axes beyond the first ``n`` are treated as a batch.
    """
    axes = tuple(range(1, 2 * spec.n, 2))
    return arr.reshape(_interleaved(spec, k) + arr.shape[spec.n:]).sum(axis=axes)


def block_mean(arr: np.ndarray, spec: GridSpec, k: int) -> np.ndarray:
    return block_sum(arr, spec, k) / float(1 << (spec.n * (spec.L - k)))


def expand(coarse: np.ndarray, spec: GridSpec, k: int) -> np.ndarray:
    """Piecewise-constant extension of a generation-k array to the finest grid."""
    g = 1 << k
    s = 1 << (spec.L - k)
    batch = coarse.shape[spec.n:]
    shp = tuple(x for _ in range(spec.n) for x in (g, 1)) + batch
    full = tuple(x for _ in range(spec.n) for x in (g, s)) + batch
    return np.broadcast_to(coarse.reshape(shp), full).reshape(spec.shape + batch)


def cond_exp(arr: np.ndarray, spec: GridSpec, k: int) -> np.ndarray:
    return expand(block_mean(arr, spec, k), spec, k)


def level_masks(cubes, spec: GridSpec) -> dict[int, np.ndarray]:
    """Union of the given cubes, one finest-grid boolean mask per generation."""
    out: dict[int, np.ndarray] = {}
    for Q in cubes:
        m = out.setdefault(Q.k, np.zeros(spec.shape, dtype=bool))
        m[Q.slices(spec)] = True
    return out


def morton_order(spec: GridSpec) -> np.ndarray:
    """Flat cell indices sorted so that every dyadic cube is a contiguous run."""
    if spec.n == 1:
        return np.arange(spec.ncells)
    i0, i1 = np.meshgrid(np.arange(spec.side), np.arange(spec.side), indexing="ij")
    code = np.zeros(spec.shape, dtype=np.int64)
    for bit in range(spec.L):
        code |= ((i1 >> bit) & 1) << (2 * bit)
        code |= ((i0 >> bit) & 1) << (2 * bit + 1)
    return np.argsort(code.ravel(), kind="stable")


def morton_cubes(spec: GridSpec, k: int) -> list[DyadicCube]:
    """Generation-k cubes in the order their runs appear in ``morton_order``."""
    if k == 0:
        return [spec.root()]
    if spec.n == 1:
        return [DyadicCube(k, (i,)) for i in range(1 << k)]
    g = 1 << k
    return [DyadicCube(k, (int(c) // g, int(c) % g)) for c in morton_order(GridSpec(2, k))]


def dilate_level_averages(arr: np.ndarray, spec: GridSpec, k: int, factor: float = 2) -> np.ndarray:
    """Average of ``arr`` over the covering raster of ``factor * Q`` for every generation-k Q.

    Cells of the raster outside the root count as zeros, matching
    ``region_average`` on ``concentric_dilate``.
    """
    s = 1 << (spec.L - k)
    g = 1 << k
    ext = math.ceil((factor - 1) * s / 2 - 1e-12)
    P = np.zeros(tuple(d + 1 for d in spec.shape), dtype=np.result_type(arr, float))
    P[(slice(1, None),) * spec.n] = arr
    for ax in range(spec.n):
        P = np.cumsum(P, axis=ax)
    lo = np.clip(np.arange(g) * s - ext, 0, spec.side)
    hi = np.clip(np.arange(g) * s + s + ext, 0, spec.side)
    if spec.n == 1:
        tot = P[hi] - P[lo]
    else:
        tot = (
            P[np.ix_(hi, hi)] - P[np.ix_(lo, hi)] - P[np.ix_(hi, lo)] + P[np.ix_(lo, lo)]
        )
    return tot / float((s + 2 * ext) ** spec.n)
