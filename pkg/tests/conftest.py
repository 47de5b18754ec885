import numpy as np
import pytest

from manlyem import ComponentParams, Dataset, SimScheme, paper_scheme_model, simulate


def random_spd(rng, p, scale=1.0):
    a = rng.normal(size=(p, p))
    return scale * (a @ a.T + p * np.eye(p)) / p


def random_component(rng, p, lam_low=-1.5, lam_high=1.5, pi=1.0):
    return ComponentParams(
        pi=pi,
        mu=rng.normal(size=p),
        sigma=random_spd(rng, p),
        lam=rng.uniform(lam_low, lam_high, size=p),
    )


def gaussian_mixture_data(rng, n, mus, covs, pis):
    g = rng.choice(len(pis), size=n, p=pis)
    x = np.array([rng.multivariate_normal(mus[k], covs[k]) for k in g])
    return Dataset(x, g)


@pytest.fixture(scope="session")
def paper_data_300():
    return simulate(SimScheme(paper_scheme_model(), 300, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
