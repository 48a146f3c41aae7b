"""Piecewise-constant complex functions on the finest dyadic generation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import impl
from .errors import DyadicError, SpecMismatchError
from .grid import DyadicCube, GridSpec, Region, block_mean


@dataclass(frozen=True, eq=False)
class GridFunction:
    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.size != self.spec.ncells:
            raise DyadicError(f"expected {self.spec.ncells} values, got {v.size}")
        v = v.reshape(self.spec.shape)
        if not np.all(np.isfinite(v)):
            raise DyadicError("grid function values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "GridFunction":
        return cls(spec, np.zeros(spec.shape))

    @classmethod
    def constant(cls, spec: GridSpec, c: complex) -> "GridFunction":
        return cls(spec, np.full(spec.shape, c, dtype=complex))

    @classmethod
    def indicator(cls, spec: GridSpec, where: DyadicCube | Region) -> "GridFunction":
        mask = where.mask if isinstance(where, Region) else where.mask(spec)
        return cls(spec, mask.astype(float))

    @classmethod
    def random(cls, spec: GridSpec, rng: np.random.Generator, complex_valued=True) -> "GridFunction":
        v = rng.standard_normal(spec.shape)
        if complex_valued:
            v = v + 1j * rng.standard_normal(spec.shape)
        return cls(spec, v)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def _coerce(self, other):
        if isinstance(other, GridFunction):
            if other.spec != self.spec:
                raise SpecMismatchError(f"{self.spec} vs {other.spec}")
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.spec, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.spec, self.values - self._coerce(other))

    def __rsub__(self, other):
        return GridFunction(self.spec, self._coerce(other) - self.values)

    def __mul__(self, other):
        return GridFunction(self.spec, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return GridFunction(self.spec, self.values / self._coerce(other))

    def __neg__(self):
        return GridFunction(self.spec, -self.values)

    def restrict(self, where: DyadicCube | Region) -> "GridFunction":
        mask = where.mask if isinstance(where, Region) else where.mask(self.spec)
        return GridFunction(self.spec, np.where(mask, self.values, 0))

    def integral(self) -> complex:
        return complex(self.values.sum() * self.spec.cell_volume)

    def allclose(self, other: "GridFunction", atol=1e-12) -> bool:
        return bool(np.max(np.abs(self.values - self._coerce(other)), initial=0.0) <= atol)

    def to_json(self) -> str:
        return json.dumps(
            {
                "spec": self.spec.to_dict(),
                "values": [[float(z.real), float(z.imag)] for z in self.flat],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "GridFunction":
        data = json.loads(text)
        spec = GridSpec(**data["spec"])
        vals = np.array([complex(re, im) for re, im in data["values"]])
        return cls(spec, vals)


def pairing(f: GridFunction, g: GridFunction) -> complex:
    """Bilinear form ``<f, g> = integral of f g`` (no conjugation)."""
    return complex(np.sum(f.values * f._coerce(g)) * f.spec.cell_volume)


def average(f: GridFunction, Q: DyadicCube) -> complex:
    if not Q.is_interior:
        raise DyadicError(f"{Q} is not inside the root")
    return complex(f.values[Q.slices(f.spec)].mean())


def region_average(f: GridFunction | np.ndarray, R: Region, spec: GridSpec | None = None) -> complex:
    """Average over the full raster of ``R``; exterior cells contribute zero."""
    vals = f.values if isinstance(f, GridFunction) else f
    total = R.count + R.n_exterior
    return complex(vals[R.mask].sum() / total) if total else 0.0


def lp_norm(f: GridFunction, p: float, R: Region | DyadicCube | None = None) -> float:
    spec = f.spec
    if R is None:
        mask = np.ones(spec.shape, dtype=bool)
    elif isinstance(R, DyadicCube):
        mask = R.mask(spec)
    else:
        mask = R.mask
    a = np.abs(f.values[mask])
    if a.size == 0:
        return 0.0
    if math.isinf(p):
        return float(a.max())
    if p < 1:
        raise DyadicError("p must be at least 1")
    s = math.fsum((a ** p).tolist()) * spec.cell_volume
    return s ** (1.0 / p)


def l2_sq(values: np.ndarray, spec: GridSpec) -> float:
    return float(np.sum(np.abs(values) ** 2) * spec.cell_volume)


def maximal_array(absf: np.ndarray, spec: GridSpec) -> np.ndarray:
    return impl.maximal_function(np.asarray(absf, dtype=float).reshape(spec.shape), spec.n, spec.L)


def maximal_function(f: GridFunction) -> GridFunction:
    """Uncentered discrete maximal function over dyadic cubes and their doubles."""
    return GridFunction(f.spec, maximal_array(np.abs(f.values), f.spec))


def level_averages(f: GridFunction, k: int) -> np.ndarray:
    return block_mean(f.values, f.spec, k)
