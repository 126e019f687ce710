import numpy as np
import pytest

from spindbm import DbmParams, DbmShape, init_params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_params(shape, seed=0, scale=1.0):
    """Dense Gaussian parameters (not orthogonal); handy for generic checks."""
    r = np.random.default_rng(seed)
    return DbmParams(
        scale * r.standard_normal((shape.n_v, shape.n_h1)),
        scale * r.standard_normal((shape.n_h1, shape.n_h2)),
        scale * r.standard_normal(shape.n_v),
        scale * r.standard_normal(shape.n_h1),
        scale * r.standard_normal(shape.n_h2),
    )


@pytest.fixture
def params_332():
    return random_params(DbmShape(3, 3, 2), seed=7)


@pytest.fixture
def ortho_params_332():
    return init_params(DbmShape(3, 3, 2), np.random.default_rng(7))
