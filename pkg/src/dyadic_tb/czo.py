"""Truncated Calderon-Zygmund kernels and their dense discretizations.

A kernel is discretized by averaging it over pairs of finest cells and
multiplying by the cell volume, so that ``(T f)_i = sum_j M_ij f_j`` is the
grid version of ``T f(x) = int K(x, y) f(y) dy``. The pairing is bilinear,
hence the transpose operator is the plain matrix transpose.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _pykernels
from ._backend import impl
from .errors import DyadicError, SpecMismatchError, UnboundedKernelError, UnknownKernelError
from .grid import DyadicCube, GridSpec, Region, concentric_dilate, morton_cubes, morton_order
from .gridfunc import GridFunction

DENSE_CELL_LIMIT = 4096
QUADRATURE_RULES = ("midpoint", "gauss2")
_NAMED = ("truncated_hilbert", "truncated_riesz")


@dataclass(frozen=True, eq=False)
class CZKernel:
    name: str
    n: int
    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(repr=False)
    C_sz: float
    C_ho: float
    alpha: float
    M: float
    params: dict = field(default_factory=dict)
    lipschitz: float | None = None

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.asarray(self.evaluator(x, y))

    def to_dict(self) -> dict:
        return {"name": self.name, "params": dict(sorted(self.params.items()))}


# -- kernel zoo ----------------------------------------------------------------


def _bump(s: np.ndarray) -> np.ndarray:
    """``exp(-1/(1-s))`` for ``s < 1``, zero otherwise."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = s < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside]))
    return out


def _bump_sup_grad(radial_weight: Callable[[np.ndarray], np.ndarray]) -> float:
    # sup over the unit ball of a radial expression, by dense sampling
    r = np.linspace(0.0, 1.0, 400001)[:-1]
    return float(np.max(radial_weight(r)))


def _zero(params, n):
    def ev(x, y):
        return np.zeros(np.broadcast_shapes(x.shape, y.shape)[:-1])

    return CZKernel("zero", n, ev, 0.0, 0.0, 1.0, 0.0, params)


def _constant(params, n):
    c = complex(params.get("c", 1.0))

    def ev(x, y):
        return np.full(np.broadcast_shapes(x.shape, y.shape)[:-1], c)

    # |x - y| <= sqrt(n) inside the root cube
    return CZKernel("constant", n, ev, abs(c) * n ** (n / 2), 0.0, 1.0, abs(c), params)


def _hilbert(params, n):
    if n != 1:
        raise DyadicError("truncated_hilbert lives in dimension 1")
    tau = float(params["tau"])
    if tau <= 0:
        raise UnboundedKernelError("truncation tau must be positive")

    def ev(x, y):
        t = x[..., 0] - y[..., 0]
        return t / (t * t + tau * tau)

    # |K| <= 1/|t|, max at |t| = tau; |K'| <= 1/t^2 and |t + s| >= |t|/2
    return CZKernel("truncated_hilbert", 1, ev, 1.0, 8.0, 1.0, 1.0 / (2 * tau), params)


def _riesz(params, n):
    if n != 2:
        raise DyadicError("truncated_riesz lives in dimension 2")
    tau = float(params["tau"])
    comp = int(params.get("component", 0))
    if tau <= 0:
        raise UnboundedKernelError("truncation tau must be positive")
    if comp not in (0, 1):
        raise DyadicError("riesz component must be 0 or 1")

    def ev(x, y):
        z = x - y
        r2 = (z * z).sum(axis=-1)
        return z[..., comp] / (r2 + tau * tau) ** 1.5

    # |grad K| <= 2/|z|^3, and |z + s| >= |z|/2 on the segment
    M = 2.0 / (3.0 * math.sqrt(3.0) * tau * tau)
    return CZKernel("truncated_riesz", 2, ev, 1.0, 64.0, 1.0, M, params)


def _smooth_bump(params, n):
    r = float(params.get("radius", 0.25))
    a = float(params.get("amplitude", 1.0))
    if r <= 0:
        raise DyadicError("bump radius must be positive")

    def ev(x, y):
        z = x - y
        return a * _bump((z * z).sum(axis=-1) / (r * r))

    def grad(rho):
        s = rho * rho
        return _bump(s) * 2.0 * rho / (1.0 - s) ** 2

    lip = abs(a) * _bump_sup_grad(grad) / r
    M = abs(a) * math.exp(-1.0)
    # K vanishes unless |x - y| < 2r once |x - y| > 2|h|
    return CZKernel("smooth_bump", n, ev, M * r ** n, 2.0 * lip * (2 * r) ** (n + 1), 1.0, M, params, lip)


def _random_cz(params, n):
    seed = int(params.get("seed", 0))
    J = int(params.get("levels", 4))
    decay = float(params.get("decay", 0.9))
    rng = np.random.default_rng([seed, n, J])
    coef = rng.uniform(-1.0, 1.0, J + 1) * decay ** np.arange(J + 1)

    def psi(z):
        s = (z * z).sum(axis=-1)
        return z[..., 0] * _bump(s)

    def ev(x, y):
        z = x - y
        out = 0.0
        for j, c in enumerate(coef):
            out = out + c * 2.0 ** (j * n) * psi(2.0 ** j * z)
        return out

    sup_psi = _bump_sup_grad(lambda r: r * _bump(r * r))
    lip_psi = _bump_sup_grad(lambda r: _bump(r * r) * (1.0 + 2.0 * r * r / (1.0 - r * r) ** 2))
    cmax = float(np.max(np.abs(coef)))
    g_sz = 2.0 ** n / (2.0 ** n - 1)
    g_ho = 2.0 ** (n + 1) / (2.0 ** (n + 1) - 1)
    C_sz = sup_psi * cmax * g_sz
    C_ho = 2.0 * lip_psi * cmax * 2.0 ** (n + 1) * g_ho
    M = sup_psi * float(np.sum(np.abs(coef) * 2.0 ** (np.arange(J + 1) * n)))
    p = dict(params)
    p.setdefault("seed", seed)
    p.setdefault("levels", J)
    return CZKernel("random_cz", n, ev, C_sz, C_ho, 1.0, M, p)


_ZOO = {
    "zero": _zero,
    "constant": _constant,
    "truncated_hilbert": _hilbert,
    "truncated_riesz": _riesz,
    "smooth_bump": _smooth_bump,
    "random_cz": _random_cz,
}

KERNEL_NAMES = tuple(_ZOO)


def kernel_zoo(name: str, params: dict | None = None, n: int | None = None) -> CZKernel:
    """Build a named kernel. ``n`` defaults to the kernel's natural dimension (else 1)."""
    params = dict(params or {})
    try:
        make = _ZOO[name]
    except KeyError:
        raise UnknownKernelError(f"unknown kernel {name!r}; known: {', '.join(KERNEL_NAMES)}") from None
    if n is None:
        n = int(params.pop("n", 2 if name == "truncated_riesz" else 1))
    else:
        params.pop("n", None)
    return make(params, n)


def sample_kernel_bounds(kernel: CZKernel, rng: np.random.Generator, samples: int = 20000) -> dict:
    """Largest sampled ratios of |K| and of its increments to their claimed bounds."""
    n = kernel.n
    x = rng.random((samples, n))
    y = rng.random((samples, n))
    Kxy = np.abs(kernel(x, y))
    d = np.linalg.norm(x - y, axis=-1)
    with np.errstate(divide="ignore"):
        bound = np.minimum(kernel.M, kernel.C_sz * d ** (-n))
    size = float(np.max(np.where(bound > 0, Kxy / np.where(bound > 0, bound, 1), np.where(Kxy > 0, np.inf, 0))))
    # increments with |h| < |x - y| / 2
    dirs = rng.standard_normal((samples, n))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    h = dirs * (d * rng.uniform(0.0, 0.5, samples) * 0.999)[:, None]
    inc = np.abs(kernel(x, y + h) - kernel(x, y)) + np.abs(kernel(x + h, y) - kernel(x, y))
    hn = np.linalg.norm(h, axis=-1)
    hb = kernel.C_ho * hn ** kernel.alpha / d ** (n + kernel.alpha)
    ok = hb > 0
    holder = float(np.max(np.where(ok, inc / np.where(ok, hb, 1), np.where(inc > 1e-15, np.inf, 0))))
    return {"size_ratio": size, "holder_ratio": holder}


def sampled_lipschitz(kernel: CZKernel, rng: np.random.Generator, samples: int = 20000, h: float = 1e-6) -> float:
    """Largest finite-difference slope of ``z -> K(z, 0)``."""
    n = kernel.n
    z = rng.uniform(-1.0, 1.0, (samples, n))
    e = rng.standard_normal((samples, n))
    e /= np.linalg.norm(e, axis=-1, keepdims=True)
    zero = np.zeros((1, n))
    return float(np.max(np.abs(kernel(z + h * e, zero) - kernel(z, zero)) / h))


# -- discretization --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CZOperator:
    spec: GridSpec
    matrix: np.ndarray = field(repr=False)
    kernel: dict = field(default_factory=dict)
    rule: str = "midpoint"

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.shape != (self.spec.ncells, self.spec.ncells):
            raise DyadicError(f"operator matrix must be {self.spec.ncells}x{self.spec.ncells}")
        if not np.all(np.isfinite(m)):
            raise DyadicError("operator matrix has non-finite entries")
        if m.flags.writeable:
            m = m.copy()
            m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def _check(self, f: GridFunction):
        if f.spec != self.spec:
            raise SpecMismatchError(f"{f.spec} vs {self.spec}")

    def _matmul(self, M: np.ndarray, values: np.ndarray) -> np.ndarray:
        batch = values.shape[self.spec.n:]
        v = values.reshape((self.spec.ncells,) + batch)
        if np.iscomplexobj(v) and not np.iscomplexobj(M):
            # keeps numpy from promoting the whole real matrix to complex on every call
            out = M @ v.real + 1j * (M @ v.imag)
        else:
            out = M @ v
        return out.reshape(self.spec.shape + batch)

    def apply_array(self, values: np.ndarray) -> np.ndarray:
        """Apply to an array of shape ``spec.shape`` plus an optional batch axis."""
        return self._matmul(self.matrix, values)

    def apply_transpose_array(self, values: np.ndarray) -> np.ndarray:
        return self._matmul(self.matrix.T, values)

    def apply(self, f: GridFunction) -> GridFunction:
        self._check(f)
        return GridFunction(self.spec, self.apply_array(f.values))

    def apply_transpose(self, f: GridFunction) -> GridFunction:
        self._check(f)
        return GridFunction(self.spec, self.apply_transpose_array(f.values))

    def transpose(self) -> "CZOperator":
        return CZOperator(self.spec, self.matrix.T, self.kernel, self.rule)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.matrix)


def _assemble_generic(kernel: CZKernel, spec: GridSpec, rule: str) -> np.ndarray:
    pts, w = _pykernels._quadrature(spec.n, spec.L, rule)
    N = spec.ncells
    out = None
    for p, wp in enumerate(w):
        x = pts[:, p, :][:, None, :]
        for q, wq in enumerate(w):
            y = pts[:, q, :][None, :, :]
            vals = np.broadcast_to(kernel(x, y), (N, N))
            out = (wp * wq) * vals if out is None else out + (wp * wq) * vals
    return out * spec.cell_volume


def discretize(
    kernel: CZKernel, spec: GridSpec, rule: str = "midpoint", cache_dir: str | Path | None = None
) -> CZOperator:
    if kernel.n != spec.n:
        raise SpecMismatchError(f"kernel is {kernel.n}-dimensional, grid is {spec.n}-dimensional")
    if rule not in QUADRATURE_RULES:
        raise DyadicError(f"unknown quadrature rule {rule!r}")
    if not math.isfinite(kernel.M):
        raise UnboundedKernelError(f"kernel {kernel.name} has no finite truncation bound")
    if spec.ncells > DENSE_CELL_LIMIT:
        raise DyadicError(f"dense operators are limited to {DENSE_CELL_LIMIT} cells")
    if cache_dir is not None:
        hit = load_cached(kernel, spec, rule, cache_dir)
        if hit is not None:
            return hit
    if kernel.name in _NAMED:
        tau = float(kernel.params["tau"])
        comp = int(kernel.params.get("component", 0))
        mat = impl.assemble_named(kernel.name, spec.n, spec.L, rule, tau, comp)
    else:
        mat = _assemble_generic(kernel, spec, rule)
    mat = np.asarray(mat)
    if not np.all(np.isfinite(mat)):
        raise UnboundedKernelError(f"kernel {kernel.name} produced non-finite values")
    if np.max(np.abs(mat), initial=0.0) > kernel.M * spec.cell_volume * (1 + 1e-9):
        raise UnboundedKernelError(f"kernel {kernel.name} exceeds its bound M = {kernel.M}")
    if np.iscomplexobj(mat) and not np.any(mat.imag):
        mat = mat.real
    T = CZOperator(spec, mat, kernel.to_dict(), rule)
    if cache_dir is not None:
        save_cached(T, cache_dir)
    return T


# -- binary cache ------------------------------------------------------------------


def cache_key(kernel_dict: dict, spec: GridSpec, rule: str) -> str:
    text = json.dumps({"kernel": kernel_dict, "spec": spec.to_dict(), "rule": rule}, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def save_cached(T: CZOperator, cache_dir: str | Path) -> Path:
    """Raw row-major little-endian complex128 (interleaved 8-byte floats)."""
    d = Path(cache_dir)
    d.mkdir(parents=True, exist_ok=True)
    path = d / (cache_key(T.kernel, T.spec, T.rule) + ".bin")
    path.write_bytes(np.ascontiguousarray(T.matrix, dtype="<c16").tobytes())
    return path


def load_cached(kernel: CZKernel, spec: GridSpec, rule: str, cache_dir: str | Path) -> CZOperator | None:
    path = Path(cache_dir) / (cache_key(kernel.to_dict(), spec, rule) + ".bin")
    if not path.exists():
        return None
    raw = np.frombuffer(path.read_bytes(), dtype="<c16")
    if raw.size != spec.ncells ** 2:
        return None
    mat = raw.reshape(spec.ncells, spec.ncells).astype(complex)
    if not np.any(mat.imag):
        mat = mat.real
    return CZOperator(spec, mat, kernel.to_dict(), rule)


# -- testing quantities ------------------------------------------------------------


def diagonal_blocks(T: CZOperator, k: int) -> tuple[np.ndarray, list[DyadicCube]]:
    """Sub-blocks ``M[Q, Q]`` for every generation-k cube, cells in Morton order."""
    spec = T.spec
    perm = morton_order(spec)
    Mz = T.matrix[np.ix_(perm, perm)]
    s = 1 << (spec.n * (spec.L - k))
    g = spec.ncells // s
    blocks = Mz.reshape(g, s, g, s)[np.arange(g), :, np.arange(g), :]
    return blocks, morton_cubes(spec, k)


def t1_loc(T: CZOperator, Q: DyadicCube) -> tuple[float, float]:
    """``(||T 1_Q||_{L1(Q)} / |Q|, ||T^tr 1_Q||_{L1(Q)} / |Q|)``."""
    if not Q.is_interior:
        raise DyadicError(f"{Q} is not inside the root")
    cells = Q.flat_cells(T.spec)
    B = T.matrix[np.ix_(cells, cells)]
    return float(np.abs(B.sum(axis=1)).mean()), float(np.abs(B.sum(axis=0)).mean())


def t1_loc_table(T: CZOperator) -> dict[DyadicCube, tuple[float, float]]:
    out = {}
    for k in range(T.spec.L + 1):
        blocks, cubes = diagonal_blocks(T, k)
        a = np.abs(blocks.sum(axis=2)).mean(axis=1)
        b = np.abs(blocks.sum(axis=1)).mean(axis=1)
        for Q, x, y in zip(cubes, a, b):
            out[Q] = (float(x), float(y))
    return out


def _ratio_p(S: np.ndarray, p: float, trials: int, rng: np.random.Generator) -> tuple[float, bool]:
    """``sup ||S f||_p^p / ||f||_p^p``: exact for p = 2, random search otherwise."""
    if S.size == 0 or not np.any(S):
        return 0.0, True
    if p == 2:
        return float(np.linalg.svd(S, compute_uv=False)[0] ** 2), True
    best = 0.0
    _, _, vh = np.linalg.svd(S, full_matrices=False)
    cands = [vh[0].conj()]
    for _ in range(trials):
        cands.append(rng.standard_normal(S.shape[1]) + 1j * rng.standard_normal(S.shape[1]))
        cands.append(np.sign(rng.standard_normal(S.shape[1])))
    for f in cands:
        den = np.sum(np.abs(f) ** p)
        if den > 0:
            best = max(best, float(np.sum(np.abs(S @ f) ** p) / den))
    return best, False


def off_diagonal_check(
    T: CZOperator, Q: DyadicCube, p: float = 2.0, trials: int = 64, rng: np.random.Generator | None = None
) -> dict:
    """Norms of ``1_Q T 1_{6Q minus Q}`` and of its dual ``1_{6Q minus Q} T 1_Q`` on L^p.

    Volumes cancel in both ratios, so the submatrices of the discretized
    operator are used directly.
    """
    if not 1 < p < math.inf:
        raise DyadicError("need 1 < p < infinity")
    rng = rng if rng is not None else np.random.default_rng(0)
    spec = T.spec
    ring = concentric_dilate(Q, 6, spec) - Region.from_cube(spec, Q)
    qc = Q.flat_cells(spec)
    rc = np.flatnonzero(ring.mask.ravel())
    direct, exact = _ratio_p(T.matrix[np.ix_(qc, rc)], p, trials, rng)
    dual, _ = _ratio_p(T.matrix[np.ix_(rc, qc)], p, trials, rng)
    return {
        "cube": str(Q),
        "p": p,
        "ratio": direct,
        "dual_ratio": dual,
        "C_p": max(direct, dual),
        "exact": exact,
        "finite": bool(math.isfinite(direct) and math.isfinite(dual)),
    }
