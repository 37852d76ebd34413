import numpy as np
import pytest

from basketproj.model import ModelKind, ModelSpec, Portfolio, correlation_to_sigma
from basketproj.rng import derive_seed
from basketproj import surface as surface_mod


@pytest.fixture(scope="session")
def appendix_model():
    """Two uncorrelated lognormal assets, 10% vol, zero rate."""
    return ModelSpec(kind=ModelKind.BLACK_SCHOLES, r=0.0,
                     sigma=np.diag([0.1, 0.1]), x0=[100.0, 100.0], T=1.0)


@pytest.fixture(scope="session")
def appendix_portfolio():
    return Portfolio([1.0, 1.0])


@pytest.fixture(scope="session")
def bs3d_model():
    sigma = correlation_to_sigma([0.2, 0.15, 0.1],
                                 [[1.0, 0.8, 0.3], [0.8, 1.0, 0.1], [0.3, 0.1, 1.0]])
    return ModelSpec(kind=ModelKind.BLACK_SCHOLES, r=0.05, sigma=sigma,
                     x0=[100.0, 100.0, 100.0], T=0.5)


@pytest.fixture(scope="session")
def bs3d_portfolio():
    return Portfolio([1.0, 1.0, 1.0])


@pytest.fixture(scope="session")
def bs3d_surface(bs3d_model, bs3d_portfolio):
    surf, env = surface_mod.build_surface(bs3d_model, bs3d_portfolio,
                                          seed=derive_seed(3, "pilot"))
    return surf, env


@pytest.fixture(scope="session")
def bachelier5_model():
    rng = np.random.Generator(np.random.Philox(key=derive_seed(5, "sigma")))
    sigma = np.diag(np.full(5, 20.0))
    iu = np.triu_indices(5, 1)
    sigma[iu] = rng.standard_normal(iu[0].size)
    return ModelSpec(kind=ModelKind.BACHELIER, r=0.05, sigma=sigma,
                     x0=np.full(5, 100.0), T=0.25)


@pytest.fixture(scope="session")
def bachelier5_portfolio():
    return Portfolio(np.ones(5))


@pytest.fixture(scope="session")
def bachelier5_surface(bachelier5_model, bachelier5_portfolio):
    surf, env = surface_mod.build_surface(bachelier5_model, bachelier5_portfolio,
                                          seed=derive_seed(2, "pilot"))
    return surf, env
