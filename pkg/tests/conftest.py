import math

import numpy as np
import pytest

from twophaseboot.design import TwoPhaseSample
from twophaseboot.simulate import CoxSimConfig, generate_cox_sample


def make_sample(stratum, xi, v=None, x=None, y=None, delta=None, ids=None):
    stratum = np.asarray(stratum)
    xi = np.asarray(xi)
    N = stratum.size
    ids = np.arange(1, N + 1) if ids is None else ids
    v = np.zeros((N, 0)) if v is None else v
    if x is None:
        x = np.zeros((N, 0))
    else:
        x = np.asarray(x, dtype=float).reshape(N, -1).copy()
        x[xi == 0] = np.nan
    y = np.arange(1.0, N + 1) if y is None else y
    delta = np.zeros(N, dtype=int) if delta is None else delta
    return TwoPhaseSample(ids=ids, stratum=stratum, xi=xi, v=v, x=x, y=y, delta=delta)


@pytest.fixture
def toy6():
    """Two strata: {1, 2} sampled in full, {3..6} half sampled."""
    return make_sample(stratum=[1, 1, 2, 2, 2, 2], xi=[1, 1, 1, 0, 1, 0],
                       v=np.array([0.5, 1.5, 2.0, 3.0, 3.5, 1.0]),
                       x=[1.0, 2.0, 0.5, 0.0, 4.0, 0.0],
                       y=np.array([1.2, 0.7, 3.1, 2.2, 0.4, 1.9]),
                       delta=[1, 0, 1, 0, 1, 0])


@pytest.fixture(scope="session")
def cox_fixture20():
    """Twenty fully observed units with one covariate and tied times."""
    rng = np.random.default_rng(20)
    x = rng.normal(size=20)
    t = np.round(rng.exponential(np.exp(-0.7 * x)), 1) + 0.1
    c = np.round(rng.uniform(0.2, 2.5, size=20), 1)
    y = np.minimum(t, c)
    delta = (t <= c).astype(int)
    return make_sample(stratum=np.ones(20, dtype=int), xi=np.ones(20, dtype=int),
                       x=x, y=y, delta=delta)


@pytest.fixture(scope="session")
def cox400():
    return generate_cox_sample(CoxSimConfig(N=400, theta=math.log(2.0), seed=1))


def random_design(rng, max_strata=3):
    """Small random two-phase design with a two-column auxiliary matrix."""
    J = int(rng.integers(1, max_strata + 1))
    stratum, xi = [], []
    for j in range(1, J + 1):
        N_j = int(rng.integers(4, 12))
        n_j = int(rng.integers(2, N_j + 1)) if j > 1 or J == 1 else N_j
        if J > 1 and j > 1:
            n_j = min(n_j, N_j - 1)
        order = rng.permutation(N_j)
        stratum += [j] * N_j
        xi += [1 if order[i] < n_j else 0 for i in range(N_j)]
    N = len(stratum)
    v = np.column_stack([rng.normal(size=N), rng.uniform(0, 2, size=N)])
    return make_sample(stratum, xi, v=v, x=rng.normal(size=N), y=rng.exponential(size=N),
                       delta=rng.integers(0, 2, size=N))
