"""Quantitative checks of the local Tb argument on a finite dyadic grid.

The entry points mirror the steps of the proof:

* :func:`compute_B1` - the transpose testing constant, maximized over all cubes;
* :func:`bootstrap_check` - the four-term splitting of ``int_{Q1} T f``;
* :func:`lemma833_ratio`, :func:`lemma835_ratio`, :func:`lemma841_check`;
* :func:`compute_B2_recursion` - the Sigma_1/Sigma_2/Sigma_3 split of the
  square sum of ``Delta^{b1}_Q T^tr 1_{Q1}`` and, for every cube of
  ``Omega1 cap Omega2``, the three-term commutator splitting
  (:func:`coifman_meyer_split`);
* :func:`inequality_constants` - exact operator constants of the square-function
  estimates, computed as top eigenvalues of normal operators.

Every result is a plain dict of floats and booleans so it can be serialized
without post-processing. Pairings are bilinear; ``T^tr`` is the plain transpose.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .accretive import PseudoAccretiveSystem
from .adapted import AdaptedSystem, D_b, Delta_b, Lambda_b, lemma815_sup
from .czo import CZOperator, diagonal_blocks
from .errors import DyadicError
from .grid import (
    DyadicCube,
    GridSpec,
    Region,
    block_mean,
    children,
    cond_exp,
    concentric_dilate,
    dilate_box,
    expand,
    dyadic_ancestor,
    format_cube,
    level_masks,
    neighbor_offsets,
)
from .gridfunc import GridFunction, maximal_array
from .linalg import sup_ratio
from .martingale import carleson_norm, carleson_sup, difference_array, dyadic_bmo_norm
from .stopping import SawtoothDecomposition, StoppingParams, decompose, decompose_f, stopping_tables

TEST_FAMILIES = ("random_sign", "random_bounded", "extremal")


def _ip(u: np.ndarray, v: np.ndarray, spec: GridSpec) -> complex:
    return complex(np.sum(u * v) * spec.cell_volume)


def _sq(u: np.ndarray, spec: GridSpec) -> float:
    return float(np.sum(np.abs(u) ** 2) * spec.cell_volume)


def _indicator(mask: np.ndarray) -> np.ndarray:
    return np.asarray(mask, dtype=float)


def _box_mask(spec: GridSpec, lo, hi) -> np.ndarray:
    return Region.from_box(spec, lo, hi).mask


# -- B1 -----------------------------------------------------------------------


def compute_B1(T: CZOperator, root: DyadicCube | None = None) -> tuple[float, DyadicCube]:
    """``max_{Q in R_root} |Q|^-1 ||T^tr 1_Q||_{L1(Q)}`` and a maximizing cube."""
    spec = T.spec
    root = spec.root() if root is None else root
    best, arg = 0.0, root
    for k in range(root.k, spec.L + 1):
        blocks, cubes = diagonal_blocks(T, k)
        vals = np.abs(blocks.sum(axis=1)).mean(axis=1)
        for Q, v in zip(cubes, vals):
            if v > best and root.contains(Q):
                best, arg = float(v), Q
    return best, arg


# -- test functions ---------------------------------------------------------------


def test_functions(
    T: CZOperator, Q1: DyadicCube, kind: str, count: int, rng: np.random.Generator
) -> list[GridFunction]:
    """Functions supported in ``Q1`` with ``|f| <= 1``.

    ``extremal`` is the single function ``conj(g)/|g|`` with ``g = T^tr 1_{Q1}``,
    which maximizes ``|int_{Q1} T f|`` among such f.
    """
    spec = T.spec
    mask = Q1.mask(spec)
    if kind == "extremal":
        g = T.apply_transpose_array(_indicator(mask))
        a = np.abs(g)
        v = np.where(a > 0, np.conj(g) / np.where(a > 0, a, 1.0), 1.0)
        return [GridFunction(spec, np.where(mask, v, 0))]
    out = []
    for _ in range(count):
        if kind == "random_sign":
            v = rng.choice([-1.0, 1.0], size=spec.shape).astype(complex)
        elif kind == "random_bounded":
            v = rng.uniform(0, 1, spec.shape) * np.exp(2j * np.pi * rng.uniform(0, 1, spec.shape))
        else:
            raise DyadicError(f"unknown test-function family {kind!r}")
        out.append(GridFunction(spec, np.where(mask, v, 0)))
    return out


def auto_params(b: GridFunction, T: CZOperator, Q1: DyadicCube, delta: float, factor: float, q: float = 4.0):
    """Stopping parameters with ``c_thr = factor * (rule value at Q1)``."""
    if factor <= 1:
        raise DyadicError("c_thr factor must exceed 1 so that Q1 itself does not stop")
    tab = stopping_tables(b, T, q)
    _, _, val = tab.rule(Q1, StoppingParams(delta=delta, c_thr=1.0, q=q))
    return StoppingParams(delta=delta, c_thr=factor * max(val, 1e-300), q=q), tab


# -- the bootstrap inequality ---------------------------------------------------------


def bootstrap_check(
    Q1: DyadicCube,
    f: GridFunction,
    T: CZOperator,
    sys1: PseudoAccretiveSystem,
    params: StoppingParams,
    B1: float | None = None,
    tables=None,
    tol: float = 1e-10,
) -> dict:
    """Split ``int_{Q1} T f`` into the four terms of the decomposition of f."""
    spec = T.spec
    vol = spec.cell_volume
    q1 = Q1.mask(spec)
    if np.any(f.values[~q1]):
        raise DyadicError("test function must be supported in Q1")
    if float(np.abs(f.values).max(initial=0.0)) > 1 + 1e-12:
        raise DyadicError("test function must satisfy |f| <= 1")
    B1 = compute_B1(T, Q1)[0] if B1 is None else B1
    b1 = sys1.b(Q1)
    d = decompose(Q1, b1, T, params, tables)
    F = decompose_f(f, d, b1, sys1)
    asys = AdaptedSystem(b1)
    g = T.apply_transpose_array(_indicator(q1))
    direct = _ip(f.values, g, spec)
    direct_alt = complex(np.sum(T.apply_array(f.values)[q1]) * vol)

    fq1 = complex(f.values[q1].mean())
    Tb1 = T.apply_array(b1.values)
    I_val = _ip(F.top.values, g, spec)
    I_abs = abs(fq1) * float(np.sum(np.abs(Tb1[q1])) * vol)

    # II: inner-product form and direct integral
    II_direct = _ip(F.omega1_part.values, g, spec)
    II_inner = 0j
    sq_D = sq_Delta = 0.0
    for k, mask in level_masks(d.omega1, spec).items():
        dg = np.where(mask, Delta_b(g, asys, k, strict=False), 0)
        df = np.where(mask, D_b(f.values, asys, k, strict=False), 0)
        II_inner += _ip(dg, df, spec)
        sq_D += _sq(df, spec)
        sq_Delta += _sq(dg, spec)
    cs_rhs = math.sqrt(sq_D * sq_Delta)

    # III: per bad cube, split into P_j, the ring (Q1 cap 2P_j) minus P_j, and the rest of Q1
    III_direct = _ip(F.bad_part.values, g, spec)
    bad = list(d.bad)
    III = {"in": 0j, "ring": 0j, "far": 0j, "main": 0j, "main_b": 0j}
    max_ring = max_far = max_fj = 0.0
    if bad:
        J = len(bad)
        fj = np.zeros(spec.shape + (J,), dtype=complex)
        ind = np.zeros((3,) + spec.shape + (J,))
        bP = np.zeros(spec.shape + (J,), dtype=complex)
        for j, P in enumerate(bad):
            sl = P.slices(spec)
            pm = P.mask(spec)
            loc = sys1.local(P)
            fj[sl + (j,)] = f.values[sl] - f.values[sl].mean() * loc
            bP[sl + (j,)] = loc
            two = concentric_dilate(P, 2, spec).mask & q1
            ind[0][..., j] = pm
            ind[1][..., j] = two & ~pm
            ind[2][..., j] = q1 & ~two
        parts = [T.apply_transpose_array(ind[i]) for i in range(3)]
        in_j = np.sum(fj * parts[0], axis=tuple(range(spec.n))) * vol
        ring_j = np.sum(fj * parts[1], axis=tuple(range(spec.n))) * vol
        far_j = np.sum(fj * parts[2], axis=tuple(range(spec.n))) * vol
        fp = np.where(ind[0] > 0, f.values[..., None], 0)
        main_j = np.sum(fp * parts[0], axis=tuple(range(spec.n))) * vol
        fmean = np.array([f.values[P.slices(spec)].mean() for P in bad])
        main_b = fmean * np.sum(bP * parts[0], axis=tuple(range(spec.n))) * vol
        meas = np.array([P.measure for P in bad])
        III.update(
            {
                "in": complex(in_j.sum()),
                "ring": complex(ring_j.sum()),
                "far": complex(far_j.sum()),
                "main": complex(main_j.sum()),
                "main_b": complex(main_b.sum()),
            }
        )
        max_ring = float(np.max(np.abs(ring_j) / meas))
        max_far = float(np.max(np.abs(far_j) / meas))
        max_fj = float(np.max(np.sqrt(np.sum(np.abs(fj) ** 2, axis=tuple(range(spec.n))) * vol / meas)))
    III_split = III["in"] + III["ring"] + III["far"]
    sum_P = d.bad_measure()

    # IV: zeta_Q terms, split into Q and Q1 minus Q; per-cube bound with 1/delta
    IV_direct = _ip(F.buffer_part.values, g, spec)
    IV_in = IV_out = 0j
    iv_bound_ok = True
    max_zeta_norm = max_zeta_mean = 0.0
    iv_ratio = 0.0
    for Q, z in F.zeta.items():
        sl = Q.slices(spec)
        qm = Q.mask(spec)
        tQ = T.apply_transpose_array(_indicator(qm))
        tout = g - tQ
        IV_in += complex(np.sum(z * tQ[sl]) * vol)
        IV_out += complex(np.sum(z * tout[sl]) * vol)
        max_zeta_norm = max(max_zeta_norm, math.sqrt(np.sum(np.abs(z) ** 2) * vol / Q.measure))
        max_zeta_mean = max(max_zeta_mean, abs(complex(z.mean())))
        if Q.k < spec.L:
            lhs = abs(complex(np.sum(z * tQ[sl]) * vol))
            rhs = abs(_ip(np.where(qm, b1.values, 0), tQ, spec)) / params.delta
            for c in children(Q, spec):
                csl = c.slices(spec)
                if d.is_good_child(c):
                    rhs += abs(complex(np.sum(b1.values[csl] * tQ[csl]) * vol)) / params.delta
                else:
                    fc = abs(complex(f.values[csl].mean()))
                    rhs += fc * abs(complex(np.sum(sys1.local(c) * tQ[csl]) * vol))
            iv_bound_ok &= lhs <= rhs * (1 + 1e-9) + tol
            if rhs > 0:
                iv_ratio = max(iv_ratio, lhs / rhs)
    IV_split = IV_in + IV_out

    total = I_val + II_direct + III_direct + IV_direct
    abs_sum = abs(I_val) + abs(II_direct) + abs(III_direct) + abs(IV_direct)
    eps = 1.0 - sum_P / Q1.measure
    C_real = (I_abs + abs(II_direct) + abs(III_direct - III["main"]) + abs(IV_direct)) / Q1.measure
    lhs_norm = abs(direct) / Q1.measure
    scale = max(1.0, abs(direct))
    return {
        "Q1": format_cube(Q1),
        "direct": abs(direct),
        "direct_two_ways": abs(direct - direct_alt),
        "I": abs(I_val),
        "I_bound": I_abs,
        "II": abs(II_direct),
        "II_inner_form_error": abs(II_inner - II_direct),
        "II_cauchy_schwarz": cs_rhs,
        "II_cs_ok": bool(abs(II_inner) <= cs_rhs * (1 + 1e-9) + tol),
        "III": abs(III_direct),
        "III_split_error": abs(III_split - III_direct),
        "III_in": abs(III["in"]),
        "III_ring": abs(III["ring"]),
        "III_far": abs(III["far"]),
        "III_main": abs(III["main"]),
        "III_main_b": abs(III["main_b"]),
        "III_in_identity_error": abs(III["in"] - (III["main"] - III["main_b"])),
        "III_main_ok": bool(abs(III["main"]) <= B1 * sum_P * (1 + 1e-9) + tol),
        "III_ring_const": max_ring,
        "III_far_const": max_far,
        "fj_l2_const": max_fj,
        "IV": abs(IV_direct),
        "IV_split_error": abs(IV_split - IV_direct),
        "IV_in": abs(IV_in),
        "IV_out": abs(IV_out),
        "IV_local_bound_ok": bool(iv_bound_ok),
        "IV_local_ratio": iv_ratio,
        "zeta_l2_const": max_zeta_norm,
        "zeta_mean_max": max_zeta_mean,
        "identity_error": abs(total - direct) / scale,
        "identity_ok": bool(abs(total - direct) <= tol * scale),
        "term_sum": abs_sum,
        "triangle_ok": bool(abs(direct) <= abs_sum * (1 + 1e-12) + tol),
        "sum_P": sum_P,
        "eps": eps,
        "C": C_real,
        "B1": B1,
        "bootstrap_lhs": lhs_norm,
        "bootstrap_rhs": (1 - eps) * B1 + C_real,
        "bootstrap_ok": bool(lhs_norm <= (1 - eps) * B1 + C_real + tol and eps > 0),
        "n_bad": len(bad),
        "n_omega1": len(d.omega1),
        "n_buffer": len(d.buffer),
    }


# -- local testing and Poincare-type ratios ----------------------------------------


def _lemma833_parts(M: np.ndarray, b: np.ndarray, Tb: np.ndarray, Mb: np.ndarray, Q: DyadicCube, spec: GridSpec):
    vol = spec.cell_volume
    cells = Q.flat_cells(spec)
    lo, hi = dilate_box(Q, 3, spec)
    rows = np.flatnonzero(_box_mask(spec, lo, hi).ravel())
    bf = b.reshape(-1)
    num = float(np.sum(np.abs(M[np.ix_(rows, cells)] @ bf[cells]) ** 2) * vol)
    two = concentric_dilate(Q, 2, spec).mask
    den = float(
        (np.sum(np.abs(Tb.reshape(-1)[cells]) ** 2) + np.sum(np.abs(b[two]) ** 2) + np.sum(Mb.reshape(-1)[cells] ** 2))
        * vol
    )
    return num, den


def lemma833_ratio(T: CZOperator, b: GridFunction, Q: DyadicCube, transpose: bool = False) -> dict:
    """``int_{3Q} |T(b 1_Q)|^2 / (int_Q |Tb|^2 + int_{2Q} |b|^2 + int_Q (Mb)^2)``."""
    spec = T.spec
    M = T.matrix.T if transpose else T.matrix
    Tb = (M @ b.values.reshape(-1)).reshape(spec.shape)
    Mb = maximal_array(np.abs(b.values), spec)
    num, den = _lemma833_parts(M, b.values, Tb, Mb, Q, spec)
    return {"cube": format_cube(Q), "num": num, "den": den, "ratio": _safe_ratio(num, den)}


def _safe_ratio(num: float, den: float) -> float:
    if den > 0:
        return num / den
    if num > 1e-300:
        raise DyadicError("degenerate denominator with non-zero numerator")
    return 0.0


def lemma833_sweep(T: CZOperator, b: GridFunction, Q1: DyadicCube, transpose: bool = False) -> dict:
    """Max of the local testing ratio over every dyadic cube inside ``Q1``."""
    spec = T.spec
    M = T.matrix.T if transpose else T.matrix
    Tb = (M @ b.values.reshape(-1)).reshape(spec.shape)
    Mb = maximal_array(np.abs(b.values), spec)
    best, arg = 0.0, Q1
    for Q in spec.all_cubes():
        if not Q1.contains(Q):
            continue
        r = _safe_ratio(*_lemma833_parts(M, b.values, Tb, Mb, Q, spec))
        if r > best:
            best, arg = r, Q
    return {"ratio": best, "argmax": format_cube(arg)}


def lemma835_ratio(f: GridFunction, Q: DyadicCube, bQ: np.ndarray) -> float:
    """``||f||_{L2(Q)} / (||f - [f]_Q||_{L2(Q)} + |Q|^-1/2 |<f, b_Q>|)`` (0 if f = 0 on Q)."""
    spec = f.spec
    vol = spec.cell_volume
    v = f.values[Q.slices(spec)]
    num = math.sqrt(np.sum(np.abs(v) ** 2) * vol)
    if num == 0:
        return 0.0
    osc = math.sqrt(np.sum(np.abs(v - v.mean()) ** 2) * vol)
    pair = abs(complex(np.sum(v * bQ) * vol)) / math.sqrt(Q.measure)
    den = osc + pair
    if den == 0:
        raise DyadicError("zero denominator for non-zero f")
    return num / den


def lemma835_chain_constant(bQ: np.ndarray) -> float:
    """The proof's constant ``1 + ||b_Q||_2 / |Q|^1/2`` (volume-free form)."""
    return 1.0 + math.sqrt(float(np.mean(np.abs(bQ) ** 2)))


def lemma835_sweep(sys: PseudoAccretiveSystem, rng: np.random.Generator, trials: int = 8) -> dict:
    """Max ratio over all cubes for random f and for the adversarial ``1 - a conj(b_Q - 1)``."""
    spec = sys.spec
    best = chain = 0.0
    ok = True
    for Q in spec.all_cubes():
        bQ = sys.local(Q)
        c = lemma835_chain_constant(bQ)
        chain = max(chain, c)
        cands = []
        for _ in range(trials):
            cands.append(rng.standard_normal(bQ.shape) + 1j * rng.standard_normal(bQ.shape))
        w = np.conj(bQ - 1)
        nw = float(np.sum(np.abs(w) ** 2))
        if nw > 1e-24:
            cands.append(1.0 - (bQ.size / nw) * w)
        for v in cands:
            full = np.zeros(spec.shape, dtype=complex)
            full[Q.slices(spec)] = v
            r = lemma835_ratio(GridFunction(spec, full), Q, bQ)
            best = max(best, r)
            ok &= r <= c * (1 + 1e-12)
    return {"ratio": best, "chain_constant": chain, "chain_ok": bool(ok)}


# -- sawtooth Lambda estimate -------------------------------------------------------


def _omega_levels(cubes, spec):
    return {k: m for k, m in level_masks(cubes, spec).items() if k < spec.L}


def lemma841_check(
    g: GridFunction,
    d1: SawtoothDecomposition,
    d2: SawtoothDecomposition,
    b1: GridFunction,
    b2: GridFunction,
    sys2: PseudoAccretiveSystem,
) -> dict:
    """``sum_{Omega2 cap Omega1} ||Lambda^{b1}_Q(b2 g)||^2 / (C2 ||g||^2_{L2(Q2)})``."""
    spec = g.spec
    asys = AdaptedSystem(b1)
    Q2 = d2.root
    q2 = Q2.mask(spec)
    gv = np.where(q2, g.values, 0)
    both = d1.omega1 & d2.omega1
    masks = _omega_levels(both, spec)
    C2 = max(float(np.mean(np.abs(b2.values[Q.slices(spec)]) ** 2)) for Q in d2.omega)
    inP = np.zeros(spec.shape, dtype=bool)
    avgP = np.zeros(spec.shape, dtype=complex)
    for P in d2.bad:
        sl = P.slices(spec)
        inP[sl] = True
        avgP[sl] = np.mean(b2.values[sl] * gv[sl])
    F2 = q2 & ~inP
    h = b2.values * gv
    total = piece_F = piece_P = piece_P_avg = 0.0
    for k, mask in masks.items():
        total += _sq(np.where(mask, Lambda_b(h, asys, k, strict=False), 0), spec)
        piece_F += _sq(np.where(mask, Lambda_b(np.where(F2, h, 0), asys, k, strict=False), 0), spec)
        hp = np.where(inP, h, 0)
        lp = np.where(mask, Lambda_b(hp, asys, k, strict=False), 0)
        la = np.where(mask, Lambda_b(avgP, asys, k, strict=False), 0)
        piece_P += _sq(lp, spec)
        piece_P_avg = max(piece_P_avg, float(np.max(np.abs(lp - la), initial=0.0)))
    gn = _sq(gv, spec)
    ratio = 0.0 if gn == 0 else total / (C2 * gn)
    return {
        "ratio": ratio,
        "C2": C2,
        "total": total,
        "piece_F2": piece_F,
        "piece_P": piece_P,
        "P_average_error": piece_P_avg,
        "split_ok": bool(math.sqrt(total) <= math.sqrt(piece_F) + math.sqrt(piece_P) + 1e-12),
    }


# -- the B2 recursion ----------------------------------------------------------------


@dataclass
class _Context:
    T: CZOperator
    b1: GridFunction
    b2: GridFunction
    a1: AdaptedSystem
    d1: SawtoothDecomposition
    d2: SawtoothDecomposition
    delta: float
    g1: np.ndarray = field(repr=False)
    t1: np.ndarray = field(repr=False)
    Tb1: np.ndarray = field(repr=False)

    @property
    def spec(self) -> GridSpec:
        return self.T.spec


def _DQ(values: np.ndarray, ctx: _Context, Q: DyadicCube) -> np.ndarray:
    out = Delta_b(values, ctx.a1, Q.k, strict=False)
    m = Q.mask(ctx.spec)
    return np.where(m.reshape(m.shape + (1,) * (out.ndim - m.ndim)), out, 0)


def _LQ(values: np.ndarray, ctx: _Context, Q: DyadicCube) -> np.ndarray:
    out = Lambda_b(values, ctx.a1, Q.k, strict=False)
    return np.where(Q.mask(ctx.spec), out, 0)


def _Ttr(values: np.ndarray, ctx: _Context) -> np.ndarray:
    return ctx.T.apply_transpose_array(values)


def coifman_meyer_split(Q: DyadicCube, ctx: _Context, decay: bool = False) -> dict:
    """Three-term splitting of ``(Delta^{b1}_Q T^tr 1) E_k b2`` and its sub-identities."""
    spec = ctx.spec
    k = Q.k
    b2 = ctx.b2.values
    qm = Q.mask(spec)
    sl = Q.slices(spec)
    base = _DQ(ctx.t1, ctx, Q)
    Ekb2 = cond_exp(b2, spec, k)
    lhs = base * Ekb2
    T1 = lhs - _DQ(_Ttr(Ekb2, ctx), ctx, Q)
    T2 = _DQ(_Ttr(Ekb2 - b2, ctx), ctx, Q)
    T3 = _DQ(_Ttr(b2, ctx), ctx, Q)
    scale = max(1.0, float(np.abs(lhs).max(initial=0.0)))
    out = {
        "cube": format_cube(Q),
        "sum_error": float(np.abs(T1 + T2 + T3 - lhs).max()) / scale,
        "T1": _sq(T1, spec),
        "T2": _sq(T2, spec),
        "T3": _sq(T3, spec),
        "lhs": _sq(lhs, spec),
    }
    # accretivity: |E_k b2| = |[b2]_Q| > delta on Q
    out["accretivity_ok"] = bool(np.all(np.abs(base[qm]) * ctx.delta <= np.abs(lhs[qm]) * (1 + 1e-12) + 1e-300))

    # T_{Q,1} = Delta_Q T^tr(([b2]_Q - E_k b2) 1_{Q^c}), split at 3Q
    bq = complex(b2[sl].mean())
    h = np.where(qm, 0, bq - Ekb2)
    lo, hi = dilate_box(Q, 3, spec)
    three = _box_mask(spec, lo, hi)
    Tp = _DQ(_Ttr(np.where(three, h, 0), ctx), ctx, Q)
    Tpp = _DQ(_Ttr(np.where(three, 0, h), ctx), ctx, Q)
    out["T1_form_error"] = float(np.abs(Tp + Tpp - T1).max()) / scale
    out["T1_near"] = _sq(Tp, spec)
    out["T1_far"] = _sq(Tpp, spec)

    # ancestor telescoping on Q
    tele = 0.0
    acc = np.zeros(spec.shape, dtype=complex)
    for i in range(1, k + 1):
        acc = acc + difference_array(b2, spec, k - i)
        anc = dyadic_ancestor(Q, i)
        avg = complex(b2[anc.slices(spec)].mean())
        tele = max(tele, float(np.abs(bq - (acc[sl] + avg)).max()))
    out["telescoping_error"] = tele

    # T_{Q,2} = Error_1 + G_Q + Phi_Q
    S = np.zeros(spec.shape, dtype=complex)
    for j in range(k, spec.L):
        S = S + difference_array(b2, spec, j)
    err1 = -_DQ(_Ttr(np.where(qm, 0, S), ctx), ctx, Q)
    gQ = np.where(qm, bq - b2, 0)
    Phi = _LQ(gQ * ctx.Tb1, ctx, Q)
    G = _DQ(_Ttr(gQ, ctx), ctx, Q) - Phi
    out["T2_split_error"] = float(np.abs(err1 + G + Phi - T2).max()) / scale
    out["Error1"] = _sq(err1, spec)
    out["G"] = _sq(G, spec)
    out["Phi"] = _sq(Phi, spec)

    Ek1g = cond_exp(gQ, spec, k + 1)
    out["g_identity_error"] = float(np.abs(Ek1g + np.where(qm, difference_array(b2, spec, k), 0)).max())
    Gp = _DQ(_Ttr(Ek1g, ctx), ctx, Q) - _LQ(Ek1g * ctx.Tb1, ctx, Q)
    gp = gQ - Ek1g
    err2 = _DQ(_Ttr(gp, ctx), ctx, Q) - _LQ(gp * ctx.Tb1, ctx, Q)
    out["G_split_error"] = float(np.abs(Gp + err2 - G).max()) / scale

    # Error_2: child splitting plus the term coming from T(1_{Q'^c} b1)
    tail = np.zeros(spec.shape, dtype=complex)
    for j in range(k + 1, spec.L):
        tail = tail + difference_array(b2, spec, j)
    out["gprime_identity_error"] = float(np.abs(np.where(qm, gp + tail, 0)).max())
    paper = np.zeros(spec.shape, dtype=complex)
    corr = np.zeros(spec.shape, dtype=complex)
    mQ = complex(ctx.a1.level_means(k)[Q.idx])
    b1v = ctx.b1.values
    for c in children(Q, spec):
        cm = c.mask(spec)
        piece = _Ttr(np.where(cm, gp, 0), ctx)
        paper += _DQ(np.where(qm & ~cm, piece, 0), ctx, Q)
        pair = _ip(_Ttr(np.where(cm, gp, 0), ctx), np.where(cm, 0, b1v), spec)
        mc = complex(ctx.a1.level_means(c.k)[c.idx])
        lam = np.where(cm, 1.0 / (mc * c.measure), 0) - np.where(qm, 1.0 / (mQ * Q.measure), 0)
        corr -= lam * pair
    out["Error2"] = _sq(err2, spec)
    out["Error2_child_form"] = _sq(paper, spec)
    out["Error2_outer_term"] = _sq(corr, spec)
    out["Error2_identity_error"] = float(np.abs(paper + corr - err2).max()) / scale
    if decay:
        out["decay"] = _error2_decay(Q, ctx, paper)
    return out


def _local_delta_matrix(values: np.ndarray, n: int, level: int) -> np.ndarray:
    """Matrix of the plain martingale difference of a subgrid, C-order cells."""
    sub = GridSpec(n, int(round(math.log2(values.shape[0]))))
    B = np.eye(sub.ncells).reshape(sub.shape + (sub.ncells,))
    return difference_array(B, sub, level).reshape(sub.ncells, sub.ncells)


def _error2_decay(Q: DyadicCube, ctx: _Context, paper: np.ndarray) -> dict:
    """Norms of ``h -> Delta_Q 1_{Q minus Q'} T^tr 1_{Q'} Delta_j h`` by gap ``j - k``.

    Also checks the summed bound
    ``||sum_{Q'} Delta_Q 1_{Q minus Q'} T^tr(g' 1_{Q'})|| <= sum_{Q', j} ||op_{j,Q'}|| ||Delta_j b2||_{L2(Q')}``.
    """
    spec = ctx.spec
    k = Q.k
    n = spec.n
    vol = spec.cell_volume
    qcells = Q.flat_cells(spec)
    nq = qcells.size
    # Delta^{b1} at generation k restricted to Q, as a local matrix
    sub = GridSpec(n, spec.L - k)
    bl = ctx.b1.values[Q.slices(spec)]
    asub = AdaptedSystem(GridFunction(sub, bl.astype(complex)))
    E = np.eye(nq).reshape(sub.shape + (nq,))
    DQm = Delta_b(E, asub, 0, strict=False).reshape(nq, nq)
    Mt = ctx.T.matrix.T
    b2 = ctx.b2.values
    by_gap: dict[int, float] = {}
    bound = 0.0
    pos = {int(c): i for i, c in enumerate(qcells)}
    for c in children(Q, spec):
        ccells = c.flat_cells(spec)
        loc = np.array([pos[int(x)] for x in ccells])
        S = np.zeros((nq, ccells.size), dtype=complex)
        rows = np.setdiff1d(np.arange(nq), loc)
        S[rows] = Mt[np.ix_(qcells[rows], ccells)]
        csub = GridSpec(n, spec.L - c.k)
        for j in range(k + 1, spec.L):
            Dj = _local_delta_matrix(np.zeros((1 << csub.L,) * n), n, j - c.k)
            op = DQm @ S @ Dj
            nrm = float(np.linalg.svd(op, compute_uv=False)[0]) if op.size else 0.0
            by_gap[j - k] = max(by_gap.get(j - k, 0.0), nrm)
            dj = difference_array(b2, spec, j)[c.slices(spec)]
            bound += nrm * math.sqrt(float(np.sum(np.abs(dj) ** 2) * vol))
    lhs = math.sqrt(_sq(paper, spec))
    return {
        "by_gap": {str(g): v for g, v in sorted(by_gap.items())},
        "summed_lhs": lhs,
        "summed_rhs": bound,
        "summed_ok": bool(lhs <= bound * (1 + 1e-9) + 1e-13),
    }


def _delta_energy_tables(g: np.ndarray, asys: AdaptedSystem, spec: GridSpec):
    """Per generation: finest-grid array of ``|Delta^{b}_k g|^2 * vol``."""
    return {
        k: np.abs(Delta_b(g, asys, k, strict=False)) ** 2 * spec.cell_volume for k in range(spec.L)
    }


def compute_B2(energy: dict, d1: SawtoothDecomposition, spec: GridSpec) -> tuple[float, DyadicCube]:
    """``sup_{Q2 in R_{Q1}} |Q2|^-1 sum_{Q in Omega1, Q in Q2} ||Delta_Q T^tr 1_{Q1}||^2``."""
    masks = _omega_levels(d1.omega1, spec)
    e = {k: np.where(m, energy[k], 0) for k, m in masks.items()}
    return carleson_sup(e, spec, d1.root)


def _sum_over(energy: dict, cubes, spec: GridSpec) -> float:
    tot = 0.0
    for k, m in _omega_levels(cubes, spec).items():
        tot += float(np.sum(energy[k][m]))
    return tot


def compute_B2_recursion(
    Q1: DyadicCube,
    Q2: DyadicCube,
    T: CZOperator,
    sys1: PseudoAccretiveSystem,
    sys2: PseudoAccretiveSystem,
    params: StoppingParams,
    params2: StoppingParams | None = None,
    coifman_meyer: bool = True,
    decay: bool = False,
    tol: float = 1e-10,
) -> dict:
    """Sigma_1/Sigma_2/Sigma_3 breakdown of ``sum_{Omega1 cap R_{Q2}} ||Delta^{b1}_Q T^tr 1_{Q1}||^2``."""
    spec = T.spec
    if not Q1.contains(Q2):
        raise DyadicError(f"{Q2} is not inside {Q1}")
    params2 = params if params2 is None else params2
    b1 = sys1.b(Q1)
    b2 = sys2.b(Q2)
    d1 = decompose(Q1, b1, T, params)
    d2 = decompose(Q2, b2, T.transpose(), params2)
    a1 = AdaptedSystem(b1)
    q1 = _indicator(Q1.mask(spec))
    g1 = T.apply_transpose_array(q1)
    energy = _delta_energy_tables(g1, a1, spec)
    B2, B2_arg = compute_B2(energy, d1, spec)

    inside = [Q for Q in d1.omega1 if Q2.contains(Q)]
    S1_cubes = [Q for Q in inside if Q in d2.omega1]
    S2_cubes = [Q for Q in inside if Q in d2.buffer]
    S3_cubes = [Q for Q in inside if d2.region_of(Q) == "bad"]
    total = _sum_over(energy, inside, spec)
    S1 = _sum_over(energy, S1_cubes, spec)
    S2 = _sum_over(energy, S2_cubes, spec)
    S3 = _sum_over(energy, S3_cubes, spec)
    sumP2 = d2.bad_measure()
    out = {
        "Q1": format_cube(Q1),
        "Q2": format_cube(Q2),
        "B2": B2,
        "B2_argmax": format_cube(B2_arg),
        "total": total,
        "Sigma1": S1,
        "Sigma2": S2,
        "Sigma3": S3,
        "split_error": abs(S1 + S2 + S3 - total) / max(1.0, total),
        "split_ok": bool(abs(S1 + S2 + S3 - total) <= tol * max(1.0, total)),
        "Sigma3_bound": B2 * sumP2,
        "Sigma3_ok": bool(S3 <= B2 * sumP2 * (1 + 1e-9) + tol),
        "sum_P2": sumP2,
        "eps2": 1 - sumP2 / Q2.measure,
    }

    # Sigma_2 pieces: 1_{Q1} = 1_{Q1 minus 2Q} + 1_{(Q1 cap 2Q) minus Q} + 1_Q
    pieces = np.zeros(3)
    consts = np.zeros(3)
    piece_err = 0.0
    for Q in S2_cubes:
        qm = Q.mask(spec)
        two = concentric_dilate(Q, 2, spec).mask
        ind = np.stack([q1 * ~two, q1 * (two & ~qm), q1 * qm], axis=-1)
        vals = _DQ_batch(T.apply_transpose_array(ind), a1, Q)
        norms = np.sum(np.abs(vals) ** 2, axis=tuple(range(spec.n))) * spec.cell_volume
        pieces += norms
        consts = np.maximum(consts, norms / Q.measure)
        piece_err = max(piece_err, float(np.abs(vals.sum(axis=-1) - _DQ_batch(g1[..., None], a1, Q)[..., 0]).max()))
    out.update(
        {
            "Sigma2_far": float(pieces[0]),
            "Sigma2_near": float(pieces[1]),
            "Sigma2_self": float(pieces[2]),
            "Sigma2_far_const": float(pieces[0] / Q2.measure),
            "Sigma2_near_const": float(pieces[1] / Q2.measure),
            "Sigma2_self_const": float(pieces[2] / Q2.measure),
            "Sigma2_percube_const": float(consts.max(initial=0.0)),
            "Sigma2_piece_error": piece_err,
        }
    )

    # Sigma_1 with 1_{Q1} replaced by 1_root, and the replacement error
    one = np.ones(spec.shape)
    t1 = T.apply_transpose_array(one)
    e_one = _delta_energy_tables(t1, a1, spec)
    e_rep = _delta_energy_tables(T.apply_transpose_array(one - q1), a1, spec)
    out["Sigma1_one"] = _sum_over(e_one, S1_cubes, spec)
    out["Sigma1_replacement"] = _sum_over(e_rep, S1_cubes, spec)
    out["Sigma1_one_const"] = out["Sigma1_one"] / Q2.measure
    out["Sigma1_replacement_const"] = out["Sigma1_replacement"] / Q2.measure
    out["Sigma1_triangle_ok"] = bool(
        math.sqrt(S1) <= math.sqrt(out["Sigma1_one"]) + math.sqrt(out["Sigma1_replacement"]) + 1e-12
    )

    if coifman_meyer and S1_cubes:
        ctx = _Context(T, b1, b2, a1, d1, d2, params2.delta, g1, t1, T.apply_array(b1.values))
        agg: dict = {}
        worst: dict = {}
        by_gap: dict = {}
        summed_ok = True
        for Q in sorted(S1_cubes, key=lambda c: (c.k, c.idx)):
            r = coifman_meyer_split(Q, ctx, decay=decay and Q.k <= spec.L - 2)
            for key, v in r.items():
                if key in ("cube", "decay"):
                    continue
                if isinstance(v, bool):
                    worst[key] = worst.get(key, True) and v
                elif key.endswith("error"):
                    worst[key] = max(worst.get(key, 0.0), v)
                else:
                    agg[key] = agg.get(key, 0.0) + v
            if "decay" in r:
                summed_ok &= r["decay"]["summed_ok"]
                for gkey, v in r["decay"]["by_gap"].items():
                    by_gap[gkey] = max(by_gap.get(gkey, 0.0), v)
        out["coifman_meyer"] = {
            "sums": agg,
            "checks": worst,
            "n_cubes": len(S1_cubes),
        }
        if decay:
            out["coifman_meyer"]["error2_decay"] = {"by_gap": by_gap, "summed_ok": bool(summed_ok)}
    return out


def _DQ_batch(values: np.ndarray, asys: AdaptedSystem, Q: DyadicCube) -> np.ndarray:
    out = Delta_b(values, asys, Q.k, strict=False)
    m = Q.mask(asys.spec)
    return np.where(m[..., None], out, 0)


# -- exact square-function constants ----------------------------------------------------


def _masked(mask: np.ndarray, arr: np.ndarray) -> np.ndarray:
    return np.where(mask.reshape(mask.shape + (1,) * (arr.ndim - mask.ndim)), arr, 0)


def _levelwise(op, op_tr, masks: dict):
    """Forward and transpose of ``x -> [1_{m_k} op_k x]_k`` for the sup-ratio solver."""
    ks = sorted(masks)

    def fwd(X):
        return [_masked(masks[k], op(X, k)) for k in ks]

    def tr(Ys):
        return sum(op_tr(_masked(masks[k], Y), k) for k, Y in zip(ks, Ys))

    return fwd, tr


def _full_masks(spec: GridSpec, levels) -> dict:
    return {k: np.ones(spec.shape, dtype=bool) for k in levels}


def carleson_bmo_ratio(h: GridFunction) -> float:
    """``sup_Q |Q|^-1 sum_{Q' in Q} ||Delta_{Q'} h||^2 / ||h||_BMO^2`` for the plain martingale."""
    bmo = dyadic_bmo_norm(h)
    if bmo == 0:
        return 0.0
    return carleson_norm(h) / bmo ** 2


def inequality_constants(
    T: CZOperator,
    sys1: PseudoAccretiveSystem,
    sys2: PseudoAccretiveSystem,
    params: StoppingParams,
    rng: np.random.Generator,
    trials: int = 16,
    Q1: DyadicCube | None = None,
    params2: StoppingParams | None = None,
) -> dict:
    """Exact (or sweep-maximized) constants of the square-function estimates.

    Keys are the report tags; all values are finite reals. ``params2`` drives
    the side-2 stopping time (defaults to ``params``).
    """
    spec = T.spec
    Q1 = spec.root() if Q1 is None else Q1
    b1 = sys1.b(Q1)
    b2 = sys2.b(Q1)
    a1 = AdaptedSystem(b1)
    out: dict[str, float] = {}
    L = spec.L

    # plain Carleson estimate: structured and random h
    best = 0.0
    x = spec.cell_centers()
    fam = [np.log(np.abs(x[..., 0] - 0.3) + 1e-3), np.where(x[..., 0] < 0.5, 1.0, -1.0)]
    for _ in range(trials):
        fam.append(rng.standard_normal(spec.shape) + 1j * rng.standard_normal(spec.shape))
        fam.append(rng.choice([-1.0, 1.0], size=spec.shape))
    for h in fam:
        best = max(best, carleson_bmo_ratio(GridFunction(spec, h.astype(complex))))
    out["prop8.6"] = best

    levels = range(L)
    fwd, tr = _levelwise(
        lambda X, k: Delta_b(X, a1, k), lambda Y, k: D_b(Y, a1, k), _full_masks(spec, levels)
    )
    out["prop8.8"] = sup_ratio(fwd, spec, None, tr)
    fwd, tr = _levelwise(
        lambda X, k: D_b(X, a1, k), lambda Y, k: Delta_b(Y, a1, k), _full_masks(spec, levels)
    )
    out["prop8.10"] = sup_ratio(fwd, spec, None, tr)

    d1 = decompose(Q1, b1, T, params)
    om1 = _omega_levels(d1.omega1, spec)
    q1m = Q1.mask(spec)
    if om1:
        fwd, tr = _levelwise(lambda X, k: D_b(X, a1, k, False), lambda Y, k: Delta_b(Y, a1, k, False), om1)
        out["lem8.14"] = sup_ratio(fwd, spec, q1m, tr)
        fwd, tr = _levelwise(lambda X, k: Delta_b(X, a1, k, False), lambda Y, k: D_b(Y, a1, k, False), om1)
        out["eq8.42"] = sup_ratio(fwd, spec, q1m, tr)
        fwd, tr = _levelwise(
            lambda X, k: Lambda_b(X, a1, k, False), lambda Y, k: Lambda_b(Y, a1, k, False), om1
        )
        out["eq8.44"] = sup_ratio(fwd, spec, q1m, tr)
    else:
        out["lem8.14"] = out["eq8.42"] = out["eq8.44"] = 0.0

    C0 = max(float(np.mean(np.abs(b1.values[Q.slices(spec)]) ** 2)) for Q in d1.omega)
    s815, _ = lemma815_sup(b1, d1.omega1, Q1)
    out["lem8.15"] = s815 / C0

    # off-diagonal estimate and its dual, exact over every cube
    c613 = c613d = 0.0
    for Q in spec.all_cubes():
        if Q.k == 0:
            continue
        ring = concentric_dilate(Q, 6, spec) - Region.from_cube(spec, Q)
        qc = Q.flat_cells(spec)
        rc = np.flatnonzero(ring.mask.ravel())
        if rc.size == 0:
            continue
        S = T.matrix[np.ix_(qc, rc)]
        c613 = max(c613, float(np.linalg.svd(S, compute_uv=False)[0] ** 2))
        S = T.matrix[np.ix_(rc, qc)]
        c613d = max(c613d, float(np.linalg.svd(S, compute_uv=False)[0] ** 2))
    out["eq6.13"] = c613
    out["eq6.13_dual"] = c613d

    out["lem8.33"] = lemma833_sweep(T, b1, Q1)["ratio"]
    out["lem8.33_tr"] = lemma833_sweep(T, b2, Q1, transpose=True)["ratio"]
    r835 = lemma835_sweep(sys2, rng, trials=2)
    out["lem8.35"] = r835["ratio"]
    out["lem8.35_chain"] = r835["chain_constant"]

    # sawtooth Lambda estimate: exact sup over g on Q2 = Q1 of the ratio
    d2 = decompose(Q1, b2, T.transpose(), params if params2 is None else params2)
    both = _omega_levels(d1.omega1 & d2.omega1, spec)
    C2 = max(float(np.mean(np.abs(b2.values[Q.slices(spec)]) ** 2)) for Q in d2.omega)
    if both:
        bb = b2.values

        def op(X, k):
            return Lambda_b(X * bb.reshape(bb.shape + (1,) * (X.ndim - bb.ndim)), a1, k, False)

        def op_tr(Y, k):
            return Lambda_b(Y, a1, k, False) * bb.reshape(bb.shape + (1,) * (Y.ndim - bb.ndim))

        fwd, tr = _levelwise(op, op_tr, both)
        out["lem8.41"] = sup_ratio(fwd, spec, q1m, tr) / C2
    else:
        out["lem8.41"] = 0.0

    # neighbor square function: sum over all generations of ||[f]_Q - [f]_{Q^m}||^2
    nb = 0.0
    for m in range(1, len(neighbor_offsets(spec.n)) + 1):
        nb = max(nb, _neighbor_sup(spec, m))
    out["nbr_sq"] = nb
    return out


def _neighbor_sup(spec: GridSpec, m: int) -> float:
    offs = neighbor_offsets(spec.n)[m - 1]

    def fwd(X):
        return [_nbr_level(X, spec, k, offs) for k in range(spec.L + 1)]

    def tr(Ys):
        return sum(_nbr_level_tr(Y, spec, k, offs) for k, Y in zip(range(spec.L + 1), Ys))

    return sup_ratio(fwd, spec, None, tr)


def _shift_means(A: np.ndarray, offs, n: int) -> np.ndarray:
    """``out[i] = A[i + o]`` with zeros where ``i + o`` leaves the index range."""
    g = A.shape[0]
    out = np.zeros_like(A)
    src, dst = [], []
    for o in offs:
        if abs(o) >= g:
            return out
        src.append(slice(max(o, 0), g + min(o, 0)))
        dst.append(slice(max(-o, 0), g - max(o, 0)))
    out[tuple(dst) + (Ellipsis,)] = A[tuple(src) + (Ellipsis,)]
    return out


def _nbr_level(X: np.ndarray, spec: GridSpec, k: int, offs) -> np.ndarray:
    A = block_mean(X, spec, k)
    return expand(A - _shift_means(A, offs, spec.n), spec, k)


def _nbr_level_tr(Y: np.ndarray, spec: GridSpec, k: int, offs) -> np.ndarray:
    # transpose of expand . (I - S_o) . block_mean is block_mean . (I - S_{-o}) . expand, up to
    # the volume factors which cancel: expand^T = s^n * block_mean, block_mean^T = expand / s^n
    A = block_mean(Y, spec, k)
    neg = tuple(-o for o in offs)
    return expand(A - _shift_means(A, neg, spec.n), spec, k)
