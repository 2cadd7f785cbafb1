"""Shared builders for tests."""

import numpy as np

from isactensor.signal_model import ArrayConfig, ScatterSet


def random_factors(rng, dims, q):
    return [(rng.standard_normal((d, q)) + 1j * rng.standard_normal((d, q))) for d in dims]


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def four_targets(cfg=ArrayConfig()):
    return ScatterSet.from_arrays(
        coeff=[1.0 + 0.5j, -0.7 + 0.2j, 0.3 - 0.9j, 0.8 + 0.8j],
        aoa=np.radians([-40.0, -10.0, 20.0, 50.0]),
        aod=np.radians([30.0, -25.0, 5.0, -50.0]),
        delay=np.array([0.05, 0.2, 0.35, 0.45]) * cfg.t_cp / 0.5,
        doppler=[1500.0, -3000.0, 800.0, 4000.0],
    )
