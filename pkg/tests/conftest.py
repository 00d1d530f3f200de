from __future__ import annotations

import pytest

import errorlab as el


def make_world(**overrides) -> el.World:
    """Linear 3-feature world with mild noise everywhere; override any
    top-level section by keyword."""
    cfg = {
        "x": {"kind": "gaussian", "dim": 3},
        "f_star": {"family": "linear", "coefficients": [1.5, -2.0, 0.7]},
        "aleatoric": {"variance": 0.25},
        "target_noise": {"variance": 0.5},
        "feature_noise": {"cov": 0.2},
        "selection": {"rule": "none"},
        "seed": 20240901,
    }
    cfg.update(overrides)
    return el.build_world(cfg)


@pytest.fixture()
def world_factory():
    return make_world


@pytest.fixture()
def noiseless_world():
    return make_world(
        aleatoric={"variance": 0.0},
        target_noise={"variance": 0.0},
        feature_noise={},
    )


@pytest.fixture()
def noisy_world():
    return make_world()
