import numpy as np
import pytest

from dyadic_tb.accretive import constant_system, perturbed_system
from dyadic_tb.errors import DyadicError
from dyadic_tb.grid import GridSpec, parse_cube
from dyadic_tb.gridfunc import GridFunction
from dyadic_tb.stopping import decompose
from dyadic_tb.verifier import (
    auto_params,
    bootstrap_check,
    compute_B1,
    compute_B2_recursion,
    lemma833_ratio,
    lemma835_ratio,
    lemma841_check,
)
from dyadic_tb.verifier import test_functions as make_test_functions

from _util import operator


def _bounded(spec, rng, Q=None):
    v = rng.uniform(0, 1, spec.shape) * np.exp(2j * np.pi * rng.uniform(0, 1, spec.shape))
    if Q is not None:
        v = np.where(Q.mask(spec), v, 0)
    return GridFunction(spec, v)


def test_B1_zero_and_constant_kernel():
    spec = GridSpec(1, 4)
    assert compute_B1(operator("zero", {}, spec))[0] == 0.0
    val, arg = compute_B1(operator("constant", {}, spec))
    assert val == pytest.approx(1.0) and arg == spec.root()


def test_B1_hilbert_brute_force():
    spec = GridSpec(1, 6)
    T = operator("truncated_hilbert", {"tau": 2.0**-6}, spec)
    M, vol = T.matrix, spec.cell_volume
    want = 0.0
    for Q in spec.all_cubes():
        c = Q.flat_cells(spec)
        col = M[np.ix_(c, c)].sum(axis=0)
        want = max(want, float(np.abs(col).sum() * vol / Q.measure))
    assert compute_B1(T)[0] == pytest.approx(want, rel=1e-12)
    assert len(list(spec.all_cubes())) == 127


def test_extremal_test_function_attains_the_pairing():
    spec = GridSpec(1, 5)
    T = operator("truncated_hilbert", {"tau": 2.0**-4}, spec)
    Q1 = parse_cube("1:0")
    (f,) = make_test_functions(T, Q1, "extremal", 1, np.random.default_rng(0))
    g = T.apply_transpose_array(Q1.mask(spec).astype(float))
    got = abs(np.sum(f.values * g) * spec.cell_volume)
    assert got == pytest.approx(float(np.abs(g[Q1.mask(spec)]).sum() * spec.cell_volume), rel=1e-12)


def test_bootstrap_zero_f():
    spec = GridSpec(1, 4)
    Q = spec.root()
    s1 = constant_system(spec, 1)
    T = operator("constant", {}, spec)
    p, _ = auto_params(s1.b(Q), T, Q, 0.25, 1.5)
    r = bootstrap_check(Q, GridFunction(spec, np.zeros(spec.shape, complex)), T, s1, p)
    for key in ("direct", "I", "II", "III", "IV"):
        assert r[key] == pytest.approx(0.0, abs=1e-14)
    assert r["triangle_ok"] and r["bootstrap_ok"]


def test_bootstrap_constant_kernel_keeps_only_the_top_term():
    spec = GridSpec(1, 4)
    Q = spec.root()
    s1 = constant_system(spec, 1)
    T = operator("constant", {}, spec)
    p, _ = auto_params(s1.b(Q), T, Q, 0.25, 1.5)
    f = _bounded(spec, np.random.default_rng(4))
    r = bootstrap_check(Q, f, T, s1, p)
    integral = abs(f.values.mean())
    assert r["direct"] == pytest.approx(integral, rel=1e-12)
    assert r["I"] == pytest.approx(integral, rel=1e-12)
    for key in ("II", "III", "IV"):
        assert r[key] == pytest.approx(0.0, abs=1e-12)
    assert r["direct_two_ways"] <= 1e-10
    assert r["B1"] == pytest.approx(1.0)


@pytest.mark.parametrize("n, L", [(1, 5), (2, 3)])
def test_bootstrap_identity_on_perturbed_systems(n, L):
    spec = GridSpec(n, L)
    name = "truncated_hilbert" if n == 1 else "truncated_riesz"
    T = operator(name, {"tau": 2.0**-4}, spec)
    s1 = perturbed_system(spec, 3, 0.25, side=1)
    Q = spec.root()
    p, _ = auto_params(s1.b(Q), T, Q, 0.25, 1.5)
    rng = np.random.default_rng(9)
    for _ in range(3):
        r = bootstrap_check(Q, _bounded(spec, rng), T, s1, p)
        assert r["direct_two_ways"] <= 1e-10
        assert r["identity_ok"] and r["triangle_ok"] and r["bootstrap_ok"]


def test_bootstrap_rejects_bad_test_functions():
    spec = GridSpec(1, 3)
    Q1 = parse_cube("1:0")
    s1 = constant_system(spec, 1)
    T = operator("constant", {}, spec)
    p, _ = auto_params(s1.b(Q1), T, Q1, 0.25, 1.5)
    with pytest.raises(DyadicError):
        bootstrap_check(Q1, GridFunction(spec, np.ones(spec.shape, complex)), T, s1, p)
    with pytest.raises(DyadicError):
        bootstrap_check(Q1, GridFunction(spec, 2 * Q1.mask(spec).astype(complex)), T, s1, p)


def test_local_testing_ratio_closed_forms():
    spec = GridSpec(1, 4)
    b = constant_system(spec, 1).b(spec.root())
    assert lemma833_ratio(operator("zero", {}, spec), b, parse_cube("1:0"))["ratio"] == 0.0
    # K = 1, b = 1, Q = [0, 1/2): num = |Q|^2 over 3Q cap root, den = 1/2 + 3/4 + 1/2
    r = lemma833_ratio(operator("constant", {}, spec), b, parse_cube("1:0"))
    assert r["num"] == pytest.approx(0.25)
    assert r["den"] == pytest.approx(1.75)
    assert r["ratio"] == pytest.approx(1 / 7)


def test_poincare_ratio_constant_system():
    spec = GridSpec(1, 4)
    Q = parse_cube("1:1")
    bQ = np.ones((spec.side >> Q.k,))
    const = GridFunction(spec, np.where(Q.mask(spec), 3.0 + 1j, 0))
    assert lemma835_ratio(const, Q, bQ) == pytest.approx(1.0)
    v = np.zeros(spec.shape, complex)
    v[Q.slices(spec)] = np.array([1, -1, 2, -2, 0.5, -0.5, 3, -3])
    assert lemma835_ratio(GridFunction(spec, v), Q, bQ) == pytest.approx(1.0)
    assert lemma835_ratio(GridFunction(spec, np.zeros(spec.shape, complex)), Q, bQ) == 0.0


def test_sawtooth_lambda_ratio_closed_forms():
    spec = GridSpec(1, 4)
    T = operator("truncated_hilbert", {"tau": 2.0**-4}, spec)
    s1, s2 = constant_system(spec, 1), constant_system(spec, 2)
    Q = spec.root()
    b1, b2 = s1.b(Q), s2.b(Q)
    p, _ = auto_params(b1, T, Q, 0.25, 3.0)
    d1 = decompose(Q, b1, T, p)
    d2 = decompose(Q, b2, T.transpose(), p)
    zero = GridFunction(spec, np.zeros(spec.shape, complex))
    assert lemma841_check(zero, d1, d2, b1, b2, s2)["ratio"] == 0.0
    rng = np.random.default_rng(1)
    for _ in range(5):
        g = GridFunction(spec, rng.standard_normal(spec.shape) + 0j)
        r = lemma841_check(g, d1, d2, b1, b2, s2)
        # b = 1: martingale differences are orthogonal, so Bessel caps the ratio at 1
        assert r["ratio"] <= 1 + 1e-12 and r["split_ok"]


def test_B2_zero_kernel_and_constant_kernel():
    spec = GridSpec(1, 4)
    Q = spec.root()
    s1, s2 = constant_system(spec, 1), constant_system(spec, 2)
    p, _ = auto_params(s1.b(Q), operator("constant", {}, spec), Q, 0.25, 1.5)
    for name in ("zero", "constant"):
        T = operator(name, {}, spec)
        r = compute_B2_recursion(Q, Q, T, s1, s2, p)
        assert r["Sigma1"] == 0.0 and r["total"] == 0.0
        assert r["split_error"] <= 1e-12
        sums = r["coifman_meyer"]["sums"]
        assert sums["T1"] == 0.0 and sums["T2"] == 0.0


def test_B2_coifman_meyer_identities_on_hilbert():
    spec = GridSpec(1, 5)
    T = operator("truncated_hilbert", {"tau": 2.0**-4}, spec)
    s1 = perturbed_system(spec, 3, 0.25, side=1)
    s2 = perturbed_system(spec, 3, 0.25, side=2)
    Q = spec.root()
    p, _ = auto_params(s1.b(Q), T, Q, 0.25, 3.0)
    r = compute_B2_recursion(Q, Q, T, s1, s2, p)
    assert r["split_error"] <= 1e-10
    assert r["Sigma2_piece_error"] <= 1e-10
    for key, v in r["coifman_meyer"]["checks"].items():
        if key.endswith("_error"):
            assert v <= 1e-10, key


def test_B2_rejects_Q2_outside_Q1():
    spec = GridSpec(1, 3)
    s1, s2 = constant_system(spec, 1), constant_system(spec, 2)
    T = operator("constant", {}, spec)
    Q1 = parse_cube("1:0")
    p, _ = auto_params(s1.b(Q1), T, Q1, 0.25, 1.5)
    with pytest.raises(DyadicError):
        compute_B2_recursion(Q1, parse_cube("1:1"), T, s1, s2, p)
