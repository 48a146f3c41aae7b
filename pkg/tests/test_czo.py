import math

import numpy as np
import pytest
from _util import operator, rand

from dyadic_tb.czo import (
    CZOperator,
    diagonal_blocks,
    discretize,
    kernel_zoo,
    load_cached,
    off_diagonal_check,
    sample_kernel_bounds,
    sampled_lipschitz,
    t1_loc,
    t1_loc_table,
)
from dyadic_tb.errors import DyadicError, SpecMismatchError, UnboundedKernelError, UnknownKernelError
from dyadic_tb.grid import DyadicCube, GridSpec
from dyadic_tb.gridfunc import GridFunction, pairing


def test_zero_kernel():
    spec = GridSpec(2, 3)
    T = operator("zero", {}, spec)
    assert T.is_zero
    f = GridFunction.random(spec, np.random.default_rng(0))
    assert np.abs(T.apply(f).values).max() == 0
    assert t1_loc(T, DyadicCube(1, (0, 1))) == (0.0, 0.0)
    r = off_diagonal_check(T, DyadicCube(2, (1, 1)), 2.0)
    assert r["C_p"] == 0 and r["finite"]


def test_constant_kernel():
    spec = GridSpec(1, 1)
    T = operator("constant", {}, spec)
    np.testing.assert_allclose(T.matrix, 0.5 * np.ones((2, 2)))
    spec = GridSpec(2, 3)
    T = operator("constant", {}, spec)
    f = GridFunction.random(spec, np.random.default_rng(1))
    np.testing.assert_allclose(T.apply(f).values, f.integral())
    for Q in spec.all_cubes():
        assert t1_loc(T, Q) == pytest.approx((Q.measure, Q.measure))


def test_hilbert_antisymmetric_and_bounded():
    spec = GridSpec(1, 6)
    for rule in ("midpoint", "gauss2"):
        T = operator("truncated_hilbert", {"tau": 2.0**-6}, spec, rule)
        np.testing.assert_allclose(T.matrix, -T.matrix.T, atol=1e-15)
    k = kernel_zoo("truncated_hilbert", {"tau": 2.0**-6})
    assert k.C_sz == 1.0 and k.M == pytest.approx(2.0**5)
    rng = np.random.default_rng(2)
    b = sample_kernel_bounds(k, rng)
    assert b["size_ratio"] <= 1 + 1e-12 and b["holder_ratio"] <= 1 + 1e-12


@pytest.mark.parametrize(
    "name,params,n",
    [
        ("truncated_hilbert", {"tau": 0.05}, 1),
        ("truncated_riesz", {"tau": 0.05}, 2),
        ("truncated_riesz", {"tau": 0.05, "component": 1}, 2),
        ("smooth_bump", {"radius": 0.3}, 1),
        ("smooth_bump", {"radius": 0.3}, 2),
        ("random_cz", {"seed": 4}, 1),
        ("random_cz", {"seed": 4}, 2),
        ("constant", {}, 2),
    ],
)
def test_claimed_kernel_constants_hold_on_samples(name, params, n):
    k = kernel_zoo(name, params, n)
    r = sample_kernel_bounds(k, np.random.default_rng(3), 5000)
    assert r["size_ratio"] <= 1 + 1e-9
    assert r["holder_ratio"] <= 1 + 1e-9
    if k.lipschitz is not None:
        assert sampled_lipschitz(k, np.random.default_rng(4), 5000) <= k.lipschitz * (1 + 1e-3)


def test_adjoint_identity():
    rng = np.random.default_rng(5)
    for spec, name in ((GridSpec(1, 5), "truncated_hilbert"), (GridSpec(2, 3), "truncated_riesz")):
        T = operator(name, {"tau": 0.1}, spec)
        f = GridFunction(spec, rand(spec, rng))
        g = GridFunction(spec, rand(spec, rng))
        assert pairing(T.apply(f), g) == pytest.approx(pairing(f, T.apply_transpose(g)), abs=1e-12)
        assert pairing(T.transpose().apply(f), g) == pytest.approx(pairing(f, T.apply(g)), abs=1e-12)


def test_batched_application():
    spec = GridSpec(2, 2)
    T = operator("random_cz", {"seed": 1}, spec)
    X = rand(spec, np.random.default_rng(6))
    batch = np.stack([X, 2 * X], axis=-1)
    out = T.apply_array(batch)
    np.testing.assert_allclose(out[..., 0], T.apply_array(X))
    np.testing.assert_allclose(out[..., 1], 2 * T.apply_array(X))


def test_t1_loc_table_and_blocks():
    spec = GridSpec(2, 3)
    T = operator("truncated_riesz", {"tau": 0.1}, spec)
    table = t1_loc_table(T)
    for Q in spec.all_cubes():
        assert table[Q] == pytest.approx(t1_loc(T, Q))
    blocks, cubes = diagonal_blocks(T, 1)
    for B, Q in zip(blocks, cubes):
        cells = Q.flat_cells(spec)
        assert set(np.round(B.ravel(), 14)) == set(np.round(T.matrix[np.ix_(cells, cells)].ravel(), 14))


def test_off_diagonal_dual_and_exactness():
    spec = GridSpec(1, 6)
    T = operator("truncated_hilbert", {"tau": 2.0**-6}, spec)
    r = off_diagonal_check(T, DyadicCube(3, (3,)), 2.0)
    assert r["exact"] and r["finite"]
    # the Hilbert matrix is antisymmetric, so the operator and its dual have equal norms
    assert r["ratio"] == pytest.approx(r["dual_ratio"], rel=1e-12)
    r3 = off_diagonal_check(T, DyadicCube(3, (3,)), 3.0, trials=8)
    assert not r3["exact"] and math.isfinite(r3["C_p"])
    with pytest.raises(DyadicError):
        off_diagonal_check(T, DyadicCube(3, (3,)), 1.0)


def test_cache_round_trip(tmp_path):
    spec = GridSpec(1, 5)
    k = kernel_zoo("truncated_hilbert", {"tau": 0.1})
    T = discretize(k, spec, "midpoint", tmp_path)
    assert len(list(tmp_path.iterdir())) == 1
    hit = load_cached(k, spec, "midpoint", tmp_path)
    assert hit is not None and np.array_equal(hit.matrix, T.matrix)
    again = discretize(k, spec, "midpoint", tmp_path)
    assert np.array_equal(again.matrix, T.matrix)


def test_errors():
    with pytest.raises(UnknownKernelError):
        kernel_zoo("nope")
    with pytest.raises(UnboundedKernelError):
        kernel_zoo("truncated_hilbert", {"tau": 0.0})
    with pytest.raises(DyadicError):
        kernel_zoo("truncated_hilbert", {"tau": 0.1}, 2)
    with pytest.raises(SpecMismatchError):
        discretize(kernel_zoo("truncated_hilbert", {"tau": 0.1}), GridSpec(2, 2))
    with pytest.raises(DyadicError):
        discretize(kernel_zoo("zero", {}, 1), GridSpec(1, 2), "simpson")
    with pytest.raises(DyadicError):
        CZOperator(GridSpec(1, 2), np.zeros((3, 3)))
    T = operator("zero", {}, GridSpec(1, 2))
    with pytest.raises(SpecMismatchError):
        T.apply(GridFunction.zeros(GridSpec(1, 3)))
