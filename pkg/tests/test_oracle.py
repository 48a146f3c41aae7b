import json

import numpy as np
import pytest

from dyadic_tb.config import load_config
from dyadic_tb.czo import t1_loc
from dyadic_tb.errors import ConfigError
from dyadic_tb.grid import GridSpec
from dyadic_tb.gridfunc import GridFunction, maximal_function
from dyadic_tb.oracle import (
    GOLDEN_TOLERANCE,
    B1_oracle,
    apply_oracle,
    compare_golden,
    maximal_oracle,
    operator_entries,
    t1_loc_oracle,
    write_golden,
)
from dyadic_tb.verifier import compute_B1

from _util import CONFIGS, GOLDEN, operator, rand


@pytest.mark.parametrize("path", sorted(GOLDEN.glob("golden_*.json")), ids=lambda p: p.stem)
def test_golden_files(path):
    dev = compare_golden(json.loads(path.read_text()))
    assert max(dev.values()) <= GOLDEN_TOLERANCE, dev


@pytest.mark.parametrize(
    "n, L, name, params, rule",
    [
        (1, 3, "truncated_hilbert", {"tau": 0.125}, "midpoint"),
        (1, 3, "smooth_bump", {"radius": 0.25}, "gauss2"),
        (2, 2, "truncated_riesz", {"tau": 0.125}, "midpoint"),
        (2, 2, "random_cz", {"seed": 1}, "midpoint"),
    ],
)
def test_oracle_matches_library(n, L, name, params, rule):
    spec = GridSpec(n, L)
    T = operator(name, params, spec, rule)
    ent = operator_entries(name, params, spec, rule)
    f = rand(spec, np.random.default_rng(0))
    np.testing.assert_allclose(T.apply_array(f), apply_oracle(ent, f, spec), atol=1e-12)
    np.testing.assert_allclose(T.apply_transpose_array(f), apply_oracle(ent, f, spec, True), atol=1e-12)
    assert compute_B1(T)[0] == pytest.approx(B1_oracle(ent, spec), abs=1e-12)
    for Q in spec.all_cubes():
        np.testing.assert_allclose(t1_loc(T, Q), t1_loc_oracle(ent, Q, spec), atol=1e-12)
    g = GridFunction(spec, f)
    np.testing.assert_allclose(maximal_function(g).values, maximal_oracle(np.abs(f), spec), atol=1e-12)


def test_oracle_depth_limit(tmp_path):
    with pytest.raises(ConfigError):
        operator_entries("zero", {}, GridSpec(1, 5))
    cfg = load_config(CONFIGS / "oracle_n1.json").replace(grid={"n": 1, "L": 5})
    with pytest.raises(ConfigError):
        write_golden(cfg, tmp_path)


def test_write_golden(tmp_path):
    cfg = load_config(CONFIGS / "oracle_n1.json").replace(grid={"n": 1, "L": 2})
    res = write_golden(cfg, tmp_path)
    assert len(res["files"]) == len(cfg.kernels)
    assert max(res["deviations"].values()) <= GOLDEN_TOLERANCE
