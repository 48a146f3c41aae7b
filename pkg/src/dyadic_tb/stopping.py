"""Stopping-time selection of bad cubes and the sawtooth splitting of R_{Q1}.

Starting at ``Q1`` we walk the tree top-down. A cube ``P`` is stopped when

    (1)  |[b]_P| <= delta,   or
    (2)  max([(Mb)^q]_P, [(Mb)^q]_{2P}) + [|Tb|^2]_P >= c_thr,

and stopped cubes are not refined further. The visited, non-stopped cubes form
the sawtooth ``Omega``; those with a stopped child, together with the
finest-generation ones (which have no children on the grid), form the buffer.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .accretive import PseudoAccretiveSystem
from .adapted import AdaptedSystem, D_b
from .czo import CZOperator
from .errors import DyadicError, RootStoppedError
from .grid import (
    DyadicCube,
    GridSpec,
    block_mean,
    children,
    concentric_dilate,
    cube_sort_key,
    dyadic_ancestor,
    dilate_level_averages,
    format_cube,
    level_masks,
    parent,
    parse_cube,
)
from .gridfunc import GridFunction, l2_sq, maximal_array, region_average

FAMILY = "dyadic+double"


@dataclass(frozen=True)
class StoppingParams:
    delta: float = 0.25
    c_thr: float = 100.0
    q: float = 4.0
    family: str = FAMILY

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise DyadicError("delta must lie in (0, 1)")
        if not self.c_thr > 0:
            raise DyadicError("c_thr must be positive")
        if not self.q > 2:
            raise DyadicError("q must exceed 2")
        if self.family != FAMILY:
            raise DyadicError(f"only the {FAMILY!r} family is implemented")

    def to_dict(self) -> dict:
        return {"delta": self.delta, "c_thr": self.c_thr, "q": self.q, "family": self.family}


def _sorted(cubes) -> list[DyadicCube]:
    return sorted(cubes, key=cube_sort_key)


@dataclass(frozen=True, eq=False)
class SawtoothDecomposition:
    spec: GridSpec
    root: DyadicCube
    omega1: frozenset
    buffer: frozenset
    bad: tuple
    bad_class: dict = field(repr=False)
    params: StoppingParams = field(default_factory=StoppingParams)

    def __post_init__(self):
        object.__setattr__(self, "_bad_set", frozenset(self.bad))

    @property
    def omega(self) -> frozenset:
        return self.omega1 | self.buffer

    @property
    def bad_set(self) -> frozenset:
        return self._bad_set

    def bad_measure(self) -> float:
        return math.fsum(P.measure for P in self.bad)

    def is_good_child(self, Q: DyadicCube) -> bool:
        return Q in self.omega1 or Q in self.buffer

    def bad_children(self, Q: DyadicCube) -> list[DyadicCube]:
        if Q.k >= self.spec.L:
            return []
        return [c for c in children(Q, self.spec) if c in self.bad_set]

    def structural_buffer(self) -> list[DyadicCube]:
        """Buffer cubes that owe their place to a stopped child."""
        return _sorted(Q for Q in self.buffer if self.bad_children(Q))

    def leaf_buffer(self) -> list[DyadicCube]:
        """Finest-generation buffer cubes placed there by the leaf convention."""
        return _sorted(Q for Q in self.buffer if Q.k == self.spec.L and not self.bad_children(Q))

    def region_of(self, Q: DyadicCube) -> str:
        """``"omega1"``, ``"buffer"`` or ``"bad"`` (inside some R_{P_j}); error outside R_{Q1}."""
        if not self.root.contains(Q):
            raise DyadicError(f"{Q} is not inside {self.root}")
        hits = [name for name, s in (("omega1", self.omega1), ("buffer", self.buffer)) if Q in s]
        bad = self.bad_set
        for i in range(Q.k - self.root.k + 1):
            if dyadic_ancestor(Q, i) in bad:
                hits.append("bad")
        if len(hits) != 1:
            raise DyadicError(f"{Q} lies in {hits or 'no'} part of the partition")
        return hits[0]

    def partition_ok(self) -> bool:
        """Every dyadic subcube of Q1 lies in exactly one part."""
        try:
            for k in range(self.root.k, self.spec.L + 1):
                for Q in self.spec.cubes(k):
                    if self.root.contains(Q):
                        self.region_of(Q)
        except DyadicError:
            return False
        return True

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "root": format_cube(self.root),
            "omega1": [format_cube(Q) for Q in _sorted(self.omega1)],
            "buffer": [format_cube(Q) for Q in _sorted(self.buffer)],
            "bad": [format_cube(P) for P in self.bad],
            "bad_class": {format_cube(P): self.bad_class[P] for P in self.bad},
            "params": self.params.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "SawtoothDecomposition":
        spec = GridSpec(**data["spec"])
        bad = tuple(_sorted(parse_cube(t) for t in data["bad"]))
        return cls(
            spec,
            parse_cube(data["root"]),
            frozenset(parse_cube(t) for t in data["omega1"]),
            frozenset(parse_cube(t) for t in data["buffer"]),
            bad,
            {parse_cube(k): v for k, v in data["bad_class"].items()},
            StoppingParams(**data["params"]),
        )


@dataclass(frozen=True, eq=False)
class StoppingTables:
    """Per-generation arrays feeding the stopping rule."""

    b_avg: list
    mq_avg: list
    mq_double: list
    tb2_avg: list
    Mb: np.ndarray = field(repr=False)
    Tb: np.ndarray = field(repr=False)

    def rule(self, P: DyadicCube, params: StoppingParams) -> tuple[bool, bool, float]:
        i = P.idx
        c1 = abs(self.b_avg[P.k][i]) <= params.delta
        val = max(self.mq_avg[P.k][i], self.mq_double[P.k][i]) + self.tb2_avg[P.k][i]
        return bool(c1), bool(val >= params.c_thr), float(val)


def stopping_tables(b: GridFunction, T: CZOperator, q: float) -> StoppingTables:
    spec = b.spec
    Mb = maximal_array(np.abs(b.values), spec)
    Tb = T.apply_array(b.values)
    mq = Mb ** q
    tb2 = np.abs(Tb) ** 2
    r = range(spec.L + 1)
    return StoppingTables(
        [block_mean(b.values, spec, k) for k in r],
        [block_mean(mq, spec, k) for k in r],
        [dilate_level_averages(mq, spec, k, 2) for k in r],
        [block_mean(tb2, spec, k) for k in r],
        Mb,
        Tb,
    )


def decompose(
    Q1: DyadicCube,
    b: GridFunction,
    T: CZOperator,
    params: StoppingParams,
    tables: StoppingTables | None = None,
) -> SawtoothDecomposition:
    spec = b.spec
    if not Q1.is_interior:
        raise DyadicError(f"{Q1} is not inside the root")
    mean = complex(b.values[Q1.slices(spec)].mean())
    if abs(mean - 1.0) > 1e-9:
        raise DyadicError(f"b must be normalized on {Q1}, got [b]_Q1 = {mean}")
    if np.any(b.values[~Q1.mask(spec)]):
        raise DyadicError(f"b must be supported in {Q1}")
    tab = tables if tables is not None else stopping_tables(b, T, params.q)

    c1, c2, val = tab.rule(Q1, params)
    if c1 or c2:
        raise RootStoppedError(f"{Q1} already stops (accretivity={c1}, size={c2}, value={val:.6g})")

    omega, bad, klass = [], [], {}
    frontier = [Q1]
    while frontier:
        nxt = []
        for P in frontier:
            c1, c2, _ = tab.rule(P, params)
            if c1 or c2:
                bad.append(P)
                klass[P] = "S1" if c1 else "S2"
            else:
                omega.append(P)
                if P.k < spec.L:
                    nxt.extend(children(P, spec))
        frontier = nxt

    bad_set = set(bad)
    buffer, omega1 = set(), set()
    for Q in omega:
        if Q.k == spec.L or any(c in bad_set for c in children(Q, spec)):
            buffer.add(Q)
        else:
            omega1.add(Q)
    return SawtoothDecomposition(
        spec, Q1, frozenset(omega1), frozenset(buffer), tuple(_sorted(bad)), klass, params
    )


# -- the f-decomposition -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FDecomposition:
    top: GridFunction
    omega1_part: GridFunction
    bad_part: GridFunction
    buffer_part: GridFunction
    zeta: dict = field(repr=False)

    def components(self) -> tuple[GridFunction, GridFunction, GridFunction, GridFunction]:
        return self.top, self.omega1_part, self.bad_part, self.buffer_part

    def total(self) -> GridFunction:
        return self.top + self.omega1_part + self.bad_part + self.buffer_part

    def zeta_function(self, Q: DyadicCube) -> GridFunction:
        spec = self.top.spec
        out = np.zeros(spec.shape, dtype=complex)
        out[Q.slices(spec)] = self.zeta[Q]
        return GridFunction(spec, out)


def decompose_f(
    f: GridFunction, d: SawtoothDecomposition, b: GridFunction, sys: PseudoAccretiveSystem
) -> FDecomposition:
    """``f = [f]_{Q1} b + sum_{Omega1} D^b_Q f + sum_j f_j + sum_{buffer} zeta_Q``.

    ``f_j = f 1_{P_j} - [f]_{P_j} b_{P_j}``. For a buffer cube with children,
    ``zeta_Q`` is ``S^b_Q f`` plus ``[f]_P b_P`` over its stopped children P;
    for a finest-generation buffer cube it is ``1_Q f - A^b_Q f``.
    """
    spec = f.spec
    asys = AdaptedSystem(b)
    for Q in d.omega1:
        asys.check_cube(Q, with_children=True)
    for Q in d.buffer:
        asys.check_cube(Q)
        for c in children(Q, spec) if Q.k < spec.L else []:
            if d.is_good_child(c):
                asys.check_cube(c)
    fv = f.values
    bv = b.values
    R = d.root

    fq1 = fv[R.slices(spec)].mean()
    bq1 = bv[R.slices(spec)].mean()
    top = np.zeros(spec.shape, dtype=complex)
    top[R.slices(spec)] = bv[R.slices(spec)] * (fq1 / bq1)

    o1 = np.zeros(spec.shape, dtype=complex)
    for k, mask in level_masks(d.omega1, spec).items():
        o1 += np.where(mask, D_b(fv, asys, k, strict=False), 0)

    badv = np.zeros(spec.shape, dtype=complex)
    for P in d.bad:
        sl = P.slices(spec)
        badv[sl] += fv[sl] - fv[sl].mean() * sys.local(P)

    zeta = {}
    buf = np.zeros(spec.shape, dtype=complex)
    for Q in _sorted(d.buffer):
        sl = Q.slices(spec)
        z = -bv[sl] * (fv[sl].mean() / bv[sl].mean())
        if Q.k == spec.L:
            z = z + fv[sl]
        else:
            lo = np.array([s.start for s in sl])
            for c in children(Q, spec):
                csl = c.slices(spec)
                rel = tuple(slice(s.start - o, s.stop - o) for s, o in zip(csl, lo))
                if d.is_good_child(c):
                    z[rel] += bv[csl] * (fv[csl].mean() / bv[csl].mean())
                else:
                    z[rel] += fv[csl].mean() * sys.local(c)
        z.setflags(write=False)
        zeta[Q] = z
        buf[sl] += z
    return FDecomposition(
        GridFunction(spec, top),
        GridFunction(spec, o1),
        GridFunction(spec, badv),
        GridFunction(spec, buf),
        zeta,
    )


# -- verification ------------------------------------------------------------------


def _recheck_rule(P: DyadicCube, b: GridFunction, Mb: np.ndarray, tb2: np.ndarray, params: StoppingParams):
    """Independent per-cube evaluation of the stopping rule (no level tables)."""
    spec = b.spec
    sl = P.slices(spec)
    c1 = abs(b.values[sl].mean()) <= params.delta
    mq = Mb ** params.q
    sup = max(float(mq[sl].mean()), region_average(mq, concentric_dilate(P, 2, spec)).real)
    return bool(c1), bool(sup + float(tb2[sl].mean()) >= params.c_thr)


def verify_lemma818(
    d: SawtoothDecomposition,
    b: GridFunction,
    T: CZOperator,
    sys: PseudoAccretiveSystem | None = None,
    eps_target: float = 0.0,
) -> dict:
    """Measured versions of the sawtooth conclusions, plus soundness re-checks."""
    spec = b.spec
    p = d.params
    R = d.root
    Q1m = R.measure
    n = spec.n
    Mb = maximal_array(np.abs(b.values), spec)
    Tb = T.apply_array(b.values)
    tb2 = np.abs(Tb) ** 2
    mq = Mb ** p.q
    mb2 = Mb ** 2

    bad_m = d.bad_measure()
    ratio = bad_m / Q1m
    omega = _sorted(d.omega)

    min_acc = min(float(abs(b.values[Q.slices(spec)].mean())) for Q in omega)
    max_lq = max(float(np.mean(np.abs(b.values[Q.slices(spec)]) ** p.q)) for Q in omega)
    c821 = max(
        max(float(mb2[Q.slices(spec)].mean()), region_average(mb2, concentric_dilate(Q, 2, spec)).real)
        for Q in omega
    )
    c822 = max(float(tb2[Q.slices(spec)].mean()) for Q in omega)

    sound = True
    for P in d.bad:
        c1, c2 = _recheck_rule(P, b, Mb, tb2, p)
        want = "S1" if c1 else ("S2" if c2 else None)
        if want is None or want != d.bad_class[P]:
            sound = False
    for Q in omega:
        if any(_recheck_rule(Q, b, Mb, tb2, p)):
            sound = False
    maximal = all(d.is_good_child(parent(P)) for P in d.bad if P != R)

    struct = d.structural_buffer()
    struct_m = math.fsum(Q.measure for Q in struct)
    leaf_m = math.fsum(Q.measure for Q in d.leaf_buffer())
    buf_m = math.fsum(Q.measure for Q in d.buffer)

    # Bad_2 sits inside the level sets of the two maximal functions
    bad2 = np.zeros(spec.shape, dtype=bool)
    bad1_m = 0.0
    for P in d.bad:
        if d.bad_class[P] == "S2":
            bad2[P.slices(spec)] = True
        else:
            bad1_m += P.measure
    q1mask = R.mask(spec)
    big1 = maximal_array(mq, spec) >= p.c_thr / 2
    big2 = maximal_array(np.where(q1mask, tb2, 0), spec) >= p.c_thr / 2
    level = big1 | big2
    bad2_m = float(bad2.sum()) * spec.cell_volume
    level_m = float(level.sum()) * spec.cell_volume
    mass = float(mq.sum() + np.where(q1mask, tb2, 0).sum()) * spec.cell_volume
    weak_const = level_m * p.c_thr / (2 * mass) if mass > 0 else 0.0

    good_m = Q1m - bad_m
    C = math.sqrt(l2_sq(b.values, spec) / Q1m)
    lhs827 = (1 - p.delta) * Q1m
    rhs827 = C * math.sqrt(good_m * Q1m) + C * math.sqrt(bad2_m * Q1m)
    literal827 = C * math.sqrt(good_m * Q1m) + math.sqrt(bad2_m * Q1m)

    return {
        "root": format_cube(R),
        "params": p.to_dict(),
        "n_bad": len(d.bad),
        "bad_ratio": ratio,
        "eps_realized": 1.0 - ratio,
        "eq8.19": ratio <= 1.0 - eps_target and ratio < 1.0,
        "eq8.20": {"min_abs_avg": float(min_acc), "max_lq_avg": max_lq, "ok": bool(min_acc > p.delta)},
        "eq8.21": c821,
        "eq8.22": c822,
        "eq8.23": {
            "structural_buffer_measure": struct_m,
            "bound": 2 ** n * bad_m,
            "ok": struct_m <= 2 ** n * bad_m,
            "leaf_buffer_measure": leaf_m,
            "total_buffer_measure": buf_m,
            "total_ok": buf_m <= 2 ** n * bad_m + Q1m,
        },
        "partition_ok": d.partition_ok(),
        "sound": sound,
        "maximal": maximal,
        "bad1_measure": bad1_m,
        "bad2_measure": bad2_m,
        "bad2_in_level_sets": bool(not np.any(bad2 & ~level)),
        "level_set_measure": level_m,
        "weak_type_constant": weak_const,
        "eq8.27": {"C": C, "lhs": lhs827, "rhs": rhs827, "ok": lhs827 <= rhs827 * (1 + 1e-12), "literal_rhs": literal827},
    }

