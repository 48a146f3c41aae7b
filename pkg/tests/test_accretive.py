import numpy as np
import pytest
from _util import operator

from dyadic_tb.accretive import (
    build_system,
    constant_system,
    load_system_file,
    perturbed_system,
    save_system_file,
    table_system,
    validate,
)
from dyadic_tb.adapted import AdaptedSystem, adapted_expectation
from dyadic_tb.errors import ConfigError, DegenerateSeedError, DyadicError
from dyadic_tb.grid import DyadicCube, GridSpec
from dyadic_tb.gridfunc import GridFunction, lp_norm
from dyadic_tb.martingale import expectation


def test_constant_system_examples():
    spec = GridSpec(2, 3)
    sys = constant_system(spec, q=3.0)
    f = GridFunction.random(spec, np.random.default_rng(0))
    for Q in spec.all_cubes():
        b = sys.b(Q)
        assert complex(b.values[Q.slices(spec)].mean()) == 1
        assert lp_norm(b, 3.0) ** 3 == pytest.approx(Q.measure)
    asys = AdaptedSystem(sys.b(spec.root()))
    assert adapted_expectation(f, asys, 2).allclose(expectation(f, 2))
    assert sys.C_i == 1


def test_zero_amplitude_is_constant():
    spec = GridSpec(1, 5)
    s = perturbed_system(spec, 7, 0.0)
    for Q in spec.all_cubes():
        np.testing.assert_allclose(s.local(Q), 1.0)


def test_perturbed_properties_and_determinism():
    spec = GridSpec(2, 4)
    a = perturbed_system(spec, 11, 0.5, theta_max=0.3, side=2)
    b = perturbed_system(spec, 11, 0.5, theta_max=0.3, side=2)
    c = perturbed_system(spec, 11, 0.5, theta_max=0.3, side=1)
    for Q in spec.all_cubes():
        assert np.array_equal(a.local(Q), b.local(Q))
        assert complex(a.local(Q).mean()) == pytest.approx(1.0, abs=1e-14)
        v = a.local(Q)
        # |1 + a w| <= 1 + a before the renormalization by a mean of modulus >= 1 - a
        assert np.abs(v).max() <= 1.5 / 0.5 + 1e-12
    assert not np.array_equal(a.local(spec.root()), c.local(spec.root()))


def test_refinement_samples_the_same_field():
    # the field on Q depends only on (seed, side, k, idx): a coarser grid sees block means of cell centres
    s4 = perturbed_system(GridSpec(1, 4), 2, 0.25)
    s6 = perturbed_system(GridSpec(1, 6), 2, 0.25)
    Q = DyadicCube(1, (1,))
    fine, coarse = s6.local(Q), s4.local(Q)
    assert fine.shape == (32,) and coarse.shape == (8,)
    assert abs(fine.mean() - coarse.mean()) < 1e-12


def test_validate_constant_zero():
    spec = GridSpec(1, 4)
    T = operator("zero", {}, spec)
    r = validate(constant_system(spec), T)
    assert (r["C_i"], r["C_ii"], r["C_iii"]) == (1.0, 0.0, 1.0)
    assert r["support_ok"] and r["normalized"]


def test_validate_side2_uses_transpose():
    spec = GridSpec(1, 4)
    T = operator("truncated_hilbert", {"tau": 0.1}, spec)
    s1, s2 = perturbed_system(spec, 1, 0.5, side=1), perturbed_system(spec, 1, 0.5, side=2)
    r2 = validate(s2, T)
    # direct evaluation of [|T^tr b_Q|^2]_Q
    want = max(
        float(np.mean(np.abs(T.apply_transpose(s2.b(Q)).values[Q.slices(spec)]) ** 2)) for Q in spec.all_cubes()
    )
    assert r2["C_ii"] == pytest.approx(want, rel=1e-12)
    assert validate(s1, T)["side"] == 1


def test_table_and_file_round_trip(tmp_path):
    spec = GridSpec(1, 2)
    sys = table_system({"0:0": [[1.5, 0], [1.5, 0], [0.5, 0], [0.5, 0]]}, spec)
    np.testing.assert_allclose(sys.local(spec.root()), [1.5, 1.5, 0.5, 0.5])
    with pytest.raises(ConfigError):
        sys.local(DyadicCube(1, (0,)))
    src = perturbed_system(spec, 3, 0.4, theta_max=0.2)
    path = tmp_path / "sys.json"
    save_system_file(src, path)
    back = load_system_file(path, spec)
    for Q in spec.all_cubes():
        np.testing.assert_allclose(back.local(Q), src.local(Q), rtol=1e-15)


def test_errors():
    spec = GridSpec(1, 2)
    with pytest.raises(DyadicError):
        perturbed_system(spec, 0, 1.0)
    with pytest.raises(DegenerateSeedError):
        table_system({"0:0": [[1, 0], [-1, 0], [1, 0], [-1, 0]]}, spec).local(spec.root())
    with pytest.raises(ConfigError):
        table_system({"0:0": [[1, 0]]}, spec)
    with pytest.raises(ConfigError):
        build_system({"kind": "mystery"}, spec, 1)
    with pytest.raises(ConfigError):
        load_system_file("/nonexistent/system.json", spec)
    with pytest.raises(DyadicError):
        constant_system(spec, side=3)
