import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dyadic_tb.errors import AncestorAboveRootError, DyadicError, GenerationOverflowError
from dyadic_tb.grid import (
    DyadicCube,
    GridSpec,
    Region,
    block_mean,
    children,
    concentric_dilate,
    cond_exp,
    dilate_level_averages,
    dyadic_ancestor,
    expand,
    format_cube,
    morton_cubes,
    morton_order,
    neighbors,
    parse_cube,
)


def test_children_examples():
    spec1, spec2 = GridSpec(1, 3), GridSpec(2, 3)
    assert children(DyadicCube(0, (0,)), spec1) == [DyadicCube(1, (0,)), DyadicCube(1, (1,))]
    got = children(DyadicCube(1, (1, 0)), spec2)
    assert got == [DyadicCube(2, (2, 0)), DyadicCube(2, (3, 0)), DyadicCube(2, (2, 1)), DyadicCube(2, (3, 1))]


def test_children_at_finest_generation():
    with pytest.raises(GenerationOverflowError):
        children(DyadicCube(3, (0,)), GridSpec(1, 3))


def test_ancestor_examples():
    assert dyadic_ancestor(DyadicCube(3, (5,)), 1) == DyadicCube(2, (2,))
    assert dyadic_ancestor(DyadicCube(3, (5,)), 3) == DyadicCube(0, (0,))
    assert dyadic_ancestor(DyadicCube(2, (3, 1)), 1) == DyadicCube(1, (1, 0))
    with pytest.raises(AncestorAboveRootError):
        dyadic_ancestor(DyadicCube(2, (3,)), 3)


def test_dilate_examples():
    spec = GridSpec(1, 3)
    # [1/2, 3/4) doubled is [3/8, 7/8)
    R = concentric_dilate(DyadicCube(2, (2,)), 2, spec)
    assert np.flatnonzero(R.mask).tolist() == [3, 4, 5, 6]
    assert R.n_exterior == 0
    # [0, 1/2) tripled is [-1/2, 1): the left half falls outside the root
    R3 = concentric_dilate(DyadicCube(1, (0,)), 3, spec)
    assert R3.mask.all()
    assert R3.n_exterior == 4
    assert R3.total_measure == pytest.approx(1.5)
    with pytest.raises(DyadicError):
        concentric_dilate(DyadicCube(1, (0,)), 4, spec)


def test_neighbors_count_and_order():
    Q = DyadicCube(2, (1,))
    assert neighbors(Q) == [DyadicCube(2, (0,)), DyadicCube(2, (2,))]
    nb = neighbors(DyadicCube(2, (1, 1)))
    assert len(nb) == 8 and DyadicCube(2, (1, 1)) not in nb and len(set(nb)) == 8


def test_cube_literals_round_trip():
    assert parse_cube("3:5") == DyadicCube(3, (5,))
    assert parse_cube("2:3,1") == DyadicCube(2, (3, 1))
    assert format_cube(DyadicCube(2, (3, 1))) == "2:3,1"
    with pytest.raises(DyadicError):
        parse_cube("nonsense")


def test_gridspec_validation():
    with pytest.raises(DyadicError):
        GridSpec(3, 2)
    with pytest.raises(DyadicError):
        GridSpec(1, 11)


def test_contains_and_measure():
    P = DyadicCube(1, (1, 0))
    assert P.contains(DyadicCube(3, (5, 2)))
    assert not P.contains(DyadicCube(3, (1, 2)))
    assert P.measure == 0.25


def test_region_algebra():
    spec = GridSpec(1, 3)
    a = Region.from_cube(spec, DyadicCube(1, (0,)))
    b = Region.from_cube(spec, DyadicCube(2, (1,)))
    assert (a - b).count == 2
    assert (a & b) == b
    assert (a | Region.root(spec)).count == 8


@given(st.integers(1, 2), st.integers(1, 6), st.data())
def test_ancestor_contains(n, L, data):
    spec = GridSpec(n, L)
    k = data.draw(st.integers(0, L))
    idx = tuple(data.draw(st.integers(0, (1 << k) - 1)) for _ in range(n))
    Q = DyadicCube(k, idx)
    i = data.draw(st.integers(0, k))
    A = dyadic_ancestor(Q, i)
    assert A.contains(Q) and A.k == k - i
    if k < L:
        kids = children(Q, spec)
        assert len(kids) == 2**n and all(dyadic_ancestor(c, 1) == Q for c in kids)


@given(st.integers(1, 2), st.integers(1, 5), st.data())
def test_block_mean_expand(n, L, data):
    spec = GridSpec(n, L)
    k = data.draw(st.integers(0, L))
    rng = np.random.default_rng(data.draw(st.integers(0, 1000)))
    f = rng.standard_normal(spec.shape)
    m = block_mean(f, spec, k)
    assert m.shape == (1 << k,) * n
    for Q in spec.cubes(k)[:4]:
        assert m[Q.idx] == pytest.approx(f[Q.slices(spec)].mean())
    np.testing.assert_allclose(cond_exp(cond_exp(f, spec, k), spec, k), cond_exp(f, spec, k))
    np.testing.assert_allclose(block_mean(expand(m, spec, k), spec, k), m)


def test_morton_blocks_are_contiguous():
    spec = GridSpec(2, 3)
    perm = morton_order(spec)
    for k in range(4):
        cubes = morton_cubes(spec, k)
        s = 1 << (2 * (3 - k))
        for j, Q in enumerate(cubes):
            assert set(perm[j * s:(j + 1) * s]) == set(Q.flat_cells(spec))


def test_dilate_level_averages_match_regions():
    spec = GridSpec(2, 3)
    f = np.random.default_rng(2).random(spec.shape)
    for k in (1, 2):
        avg = dilate_level_averages(f, spec, k, 2)
        for Q in spec.cubes(k):
            R = concentric_dilate(Q, 2, spec)
            want = f[R.mask].sum() / (R.count + R.n_exterior)
            assert avg[Q.idx] == pytest.approx(want)
