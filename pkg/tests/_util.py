"""Shared builders for the test suite."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from dyadic_tb.accretive import constant_system, perturbed_system
from dyadic_tb.czo import discretize, kernel_zoo
from dyadic_tb.grid import GridSpec

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
GOLDEN = Path(__file__).resolve().parent / "golden"

TAU = 2.0**-4

# kernel-zoo members per dimension
ZOO = {
    1: [
        ("zero", {}),
        ("constant", {}),
        ("truncated_hilbert", {"tau": TAU}),
        ("smooth_bump", {"radius": 0.25}),
        ("random_cz", {"seed": 1}),
    ],
    2: [
        ("zero", {}),
        ("constant", {}),
        ("truncated_riesz", {"tau": TAU}),
        ("smooth_bump", {"radius": 0.25}),
        # finest bump radius 2^-3 spans two cells at L = 4
        ("random_cz", {"seed": 1, "levels": 3}),
    ],
}

# (amplitude, theta_max) of the four reference systems
SYSTEMS = {
    "constant": (0.0, 0.0),
    "perturbed_a0.25": (0.25, 0.0),
    "perturbed_a0.5": (0.5, 0.0),
    "complex_theta0.3": (0.25, 0.3),
}


def operator(name: str, params: dict, spec: GridSpec, rule: str = "midpoint"):
    return discretize(kernel_zoo(name, params, spec.n), spec, rule)


def system_pair(spec: GridSpec, kind: str, seed: int = 3):
    a, th = SYSTEMS[kind]
    if a == 0 and th == 0:
        return constant_system(spec, 1), constant_system(spec, 2)
    return (
        perturbed_system(spec, seed, a, theta_max=th, side=1),
        perturbed_system(spec, seed, a, theta_max=th, side=2),
    )


def rand(spec: GridSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(spec.shape) + 1j * rng.standard_normal(spec.shape)
