import json

import pytest

from dyadic_tb.config import load_config, parse_config
from dyadic_tb.errors import ConfigError

from _util import CONFIGS

BASE = {
    "grid": {"n": 1, "L": 4},
    "kernel": {"name": "truncated_hilbert", "params": {"tau": 0.0625}},
    "seed": 0,
}


def _with(**changes):
    return {**json.loads(json.dumps(BASE)), **changes}


def test_defaults():
    cfg = parse_config(BASE)
    assert cfg.kernel["rule"] == "midpoint"
    assert cfg.systems["side1"]["kind"] == "constant"
    assert cfg.stopping == {"delta": 0.25, "c_thr_factor": 2.0}
    assert cfg.q1_generations == (0,)
    assert cfg.tolerance == 1e-10


def test_hash_is_stable_and_sensitive():
    a, b = parse_config(BASE), parse_config(_with())
    assert a.hash() == b.hash()
    assert parse_config(_with(seed=1)).hash() != a.hash()
    assert parse_config(_with(stopping={"delta": 0.3})).hash() != a.hash()


def test_seed_override_and_tolerance_scale():
    cfg = parse_config(BASE, seed_override=7, tolerance_scale=10)
    assert cfg.seed == 7 and cfg.tolerance == pytest.approx(1e-9)


def test_replace_revalidates():
    cfg = parse_config(BASE)
    assert cfg.replace(seed=3).seed == 3
    with pytest.raises(ConfigError):
        cfg.replace(stopping={"delta": 2.0})


@pytest.mark.parametrize(
    "bad",
    [
        {"grid": {"n": 3, "L": 4}},
        {"grid": {"n": 1, "L": 11}},
        {"kernel": {"name": "nope"}},
        {"kernel": {"name": "zero", "rule": "simpson"}},
        {"stopping": {"delta": 1.5}},
        {"stopping": {"c_thr_factor": 1.0}},
        {"systems": {"side1": {"kind": "perturbed", "amplitude": 0.2}}},
        {"systems": {"side1": {"kind": "perturbed", "seed": 1, "amplitude": 1.2}}},
        {"test_functions": {"kinds": ["wild"]}},
        {"q1_generations": [4]},
        {"checks": ["everything"]},
        {"sweep": {"param": "n", "values": [1]}},
        {"q2": "garbage"},
        {"q2": "5:0"},
        {"q2": "1:0,0"},
    ],
)
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        parse_config(_with(**bad))


def test_missing_seed():
    data = _with()
    del data["seed"]
    with pytest.raises(ConfigError):
        parse_config(data)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_shipped_configs_parse():
    for path in sorted(CONFIGS.glob("*.json")):
        load_config(path)
