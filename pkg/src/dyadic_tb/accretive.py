"""Pseudo-accretive systems ``{b_Q}``: one testing function per dyadic cube.

Every ``b_Q`` is supported in ``Q`` and normalized so that ``[b_Q]_Q = 1``.
Generators return the values on the cells of ``Q`` only (shape ``(s,) * n``
with ``s = 2**(L - k)``); :meth:`PseudoAccretiveSystem.b` embeds them.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .czo import CZOperator, diagonal_blocks
from .errors import ConfigError, DegenerateSeedError, DyadicError
from .grid import DyadicCube, GridSpec, format_cube, morton_cubes, morton_order, parse_cube
from .gridfunc import GridFunction

DEGENERATE_MEAN = 1e-6


@dataclass(eq=False)
class PseudoAccretiveSystem:
    spec: GridSpec
    side: int
    generator: Callable[[DyadicCube], np.ndarray] = field(repr=False)
    q: float = 4.0
    kind: str = "constant"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.side not in (1, 2):
            raise DyadicError("system side must be 1 or 2")
        if not self.q > 2:
            raise DyadicError("q must exceed 2")
        self._local: dict[DyadicCube, np.ndarray] = {}
        self._C_i: float | None = None

    def local(self, Q: DyadicCube) -> np.ndarray:
        if not Q.is_interior or Q.k > self.spec.L:
            raise DyadicError(f"{Q} is not a cube of the grid")
        if Q not in self._local:
            s = 1 << (self.spec.L - Q.k)
            v = np.asarray(self.generator(Q), dtype=complex).reshape((s,) * self.spec.n)
            v.setflags(write=False)
            self._local[Q] = v
        return self._local[Q]

    def b(self, Q: DyadicCube) -> GridFunction:
        out = np.zeros(self.spec.shape, dtype=complex)
        out[Q.slices(self.spec)] = self.local(Q)
        return GridFunction(self.spec, out)

    def level_stack(self, k: int) -> np.ndarray:
        """Row ``a`` holds ``b_Q`` on ``Q`` for the a-th generation-k cube, Morton order."""
        m = self.spec.L - k
        inner = morton_order(GridSpec(self.spec.n, m)) if m else np.zeros(1, dtype=int)
        return np.stack([self.local(Q).reshape(-1)[inner] for Q in morton_cubes(self.spec, k)])

    @property
    def C_i(self) -> float:
        """``max_Q [|b_Q|^q]_Q`` over every dyadic cube of the grid."""
        if self._C_i is None:
            self._C_i = max(
                float(np.mean(np.abs(self.local(Q)) ** self.q)) for Q in self.spec.all_cubes()
            )
        return self._C_i

    def to_dict(self) -> dict:
        return {"kind": self.kind, "side": self.side, "q": self.q, **self.params}


def constant_system(spec: GridSpec, side: int = 1, q: float = 4.0) -> PseudoAccretiveSystem:
    def gen(Q):
        return np.ones((1 << (spec.L - Q.k),) * spec.n)

    return PseudoAccretiveSystem(spec, side, gen, q, "constant", {})


def _normalize(v: np.ndarray, Q: DyadicCube) -> np.ndarray:
    m = v.mean()
    if abs(m) < DEGENERATE_MEAN:
        raise DegenerateSeedError(f"|[b_Q]_Q| = {abs(m):.2e} on {format_cube(Q)}")
    return v / m


MODES = 6
MAX_FREQ = 3


def _trig_field(rng: np.random.Generator, n: int, u: np.ndarray) -> tuple[np.ndarray, float]:
    """``sum_m a_m cos(2 pi <k_m, u> + phi_m)`` at points ``u`` and the bound ``sum |a_m|``."""
    freqs = rng.integers(-MAX_FREQ, MAX_FREQ + 1, size=(MODES, n))
    freqs[np.all(freqs == 0, axis=1), 0] = 1
    amp = rng.uniform(-1.0, 1.0, MODES)
    phase = rng.uniform(0.0, 2 * np.pi, MODES)
    vals = np.cos(2 * np.pi * np.tensordot(u, freqs.T, axes=1) + phase) @ amp
    return vals, float(np.abs(amp).sum())


def perturbed_system(
    spec: GridSpec,
    seed: int,
    amplitude: float,
    q: float = 4.0,
    theta_max: float = 0.0,
    side: int = 1,
) -> PseudoAccretiveSystem:
    """``b_Q = 1_Q (1 + a w_Q) e^{i theta_Q}``, renormalized to mean one on Q.

    ``w_Q`` and ``theta_Q`` are random trigonometric fields in coordinates
    relative to Q, sampled at cell centres: the oscillation is mean-adjusted
    and scaled so that ``|w_Q| <= 1``, and ``|theta_Q| <= theta_max``. The
    fields depend on ``(seed, side, k, idx)`` only, so refining the grid
    samples the same functions more finely.
    """
    if not 0 <= amplitude < 1:
        raise DyadicError("amplitude must lie in [0, 1)")
    if theta_max < 0:
        raise DyadicError("theta_max must be non-negative")
    n = spec.n

    def gen(Q):
        s = 1 << (spec.L - Q.k)
        c = (np.arange(s) + 0.5) / s
        u = np.stack(np.meshgrid(*([c] * n), indexing="ij"), axis=-1)
        rng = np.random.default_rng([seed, side, Q.k, *Q.idx])
        w, bound = _trig_field(rng, n, u)
        w = (w - w.mean()) / (2 * bound)
        v = (1.0 + amplitude * w).astype(complex)
        th, tb = _trig_field(rng, n, u)
        if theta_max > 0:
            v *= np.exp(1j * theta_max * th / tb)
        return _normalize(v, Q)

    params = {"seed": int(seed), "amplitude": float(amplitude), "theta_max": float(theta_max)}
    return PseudoAccretiveSystem(spec, side, gen, q, "perturbed", params)


def table_system(raw: dict, spec: GridSpec, side: int = 1, q: float = 4.0, source: str = "table") -> PseudoAccretiveSystem:
    """System from ``{"k:idx": [[re, im], ...]}`` (values on Q's cells, C order), normalized per cube."""
    table = {}
    for key, vals in raw.items():
        Q = parse_cube(key)
        if Q.n != spec.n or Q.k > spec.L:
            raise ConfigError(f"{key} is not a cube of {spec}")
        s = 1 << (spec.L - Q.k)
        try:
            arr = np.array([complex(re, im) for re, im in vals])
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: values must be [re, im] pairs") from None
        if arr.size != s ** spec.n:
            raise ConfigError(f"{key}: expected {s ** spec.n} values, got {arr.size}")
        table[Q] = _normalize(arr.reshape((s,) * spec.n), Q)

    def gen(Q):
        try:
            return table[Q]
        except KeyError:
            raise ConfigError(f"system {source} has no entry for {format_cube(Q)}") from None

    return PseudoAccretiveSystem(spec, side, gen, q, "table", {"cubes": sorted(raw)})


def load_system_file(path: str | Path, spec: GridSpec, side: int = 1, q: float = 4.0) -> PseudoAccretiveSystem:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read system file {path}: {exc}") from exc
    sys = table_system(raw, spec, side, q, str(path))
    sys.kind, sys.params = "file", {"path": str(path)}
    return sys


def save_system_file(sys: PseudoAccretiveSystem, path: str | Path, cubes=None) -> None:
    cubes = sys.spec.all_cubes() if cubes is None else cubes
    data = {
        format_cube(Q): [[float(z.real), float(z.imag)] for z in sys.local(Q).reshape(-1)] for Q in cubes
    }
    Path(path).write_text(json.dumps(data, sort_keys=True))


def build_system(cfg: dict, spec: GridSpec, side: int) -> PseudoAccretiveSystem:
    kind = cfg.get("kind", "constant")
    q = float(cfg.get("q", 4.0))
    if kind == "constant":
        return constant_system(spec, side, q)
    if kind == "perturbed":
        return perturbed_system(
            spec,
            int(cfg.get("seed", 0)),
            float(cfg.get("amplitude", 0.25)),
            q,
            float(cfg.get("theta_max", 0.0)),
            side,
        )
    if kind == "file":
        return load_system_file(cfg["path"], spec, side, q)
    if kind == "table":
        return table_system(cfg["values"], spec, side, q)
    raise ConfigError(f"unknown system kind {kind!r}")


def validate(sys: PseudoAccretiveSystem, T: CZOperator, tol: float = 1e-12) -> dict:
    """Check support, L^q control, testing condition and normalization on every cube.

    The testing quantity is ``[|T b_Q|^2]_Q`` for side 1 and
    ``[|T^tr b_Q|^2]_Q`` for side 2, evaluated on diagonal blocks.
    """
    spec = sys.spec
    C_i = C_ii = 0.0
    C_iii = 0.0
    worst = {"i": None, "ii": None, "iii": None}
    support_ok = True
    norm_ok = True
    for k in range(spec.L + 1):
        blocks, cubes = diagonal_blocks(T, k)
        stack = sys.level_stack(k)
        if sys.side == 2:
            blocks = np.swapaxes(blocks, 1, 2)
        Tb = np.einsum("aij,aj->ai", blocks, stack)
        ii = np.mean(np.abs(Tb) ** 2, axis=1)
        i_ = np.mean(np.abs(stack) ** sys.q, axis=1)
        means = stack.mean(axis=1)
        for a, Q in enumerate(cubes):
            if i_[a] > C_i:
                C_i, worst["i"] = float(i_[a]), format_cube(Q)
            if ii[a] > C_ii:
                C_ii, worst["ii"] = float(ii[a]), format_cube(Q)
            re = float(means[a].real)
            r = math.inf if re <= 0 else 1.0 / re
            if r > C_iii:
                C_iii, worst["iii"] = r, format_cube(Q)
            if abs(means[a] - 1.0) > tol:
                norm_ok = False
    # support holds by construction of b(Q); spot-check the embedding itself
    for Q in (spec.root(), spec.cubes(spec.L)[-1]):
        bq = sys.b(Q).values
        if np.any(bq[~Q.mask(spec)]):
            support_ok = False
    return {
        "C_i": C_i,
        "C_ii": C_ii,
        "C_iii": C_iii,
        "worst": worst,
        "support_ok": support_ok,
        "normalized": norm_ok,
        "side": sys.side,
        "q": sys.q,
    }
