import numpy as np
import pytest

from dyadic_tb.grid import GridSpec
from dyadic_tb.invariants import REGISTRY, grid_check


@pytest.mark.parametrize("n, L", [(1, 3), (1, 5), (2, 3)])
def test_grid_check_passes(n, L):
    rows = grid_check(GridSpec(n, L), np.random.default_rng(0), trials=10)
    assert [r["metric"] for r in rows] == list(REGISTRY)
    bad = [(r["metric"], r["value"]) for r in rows if not r["passed"]]
    assert not bad
