import math

import numpy as np
import pytest

from twophaseboot.design import validate_sample
from twophaseboot.errors import DataError, DegenerateStratum
from twophaseboot.simulate import (
    CoxSimConfig,
    expected_censoring,
    expected_phase2_size,
    generate_cox_sample,
)

DESIGN_CONFIG = CoxSimConfig(N=400, theta=math.log(2.0), lambda0=0.1, cens_upper=1.1,
                            sens=0.9, spec=0.9, exposure_prev=0.5, phase2_fraction=0.3)


def test_expected_censoring_and_size():
    assert expected_censoring(DESIGN_CONFIG) == pytest.approx(0.922, abs=5e-4)
    assert expected_phase2_size(DESIGN_CONFIG) == pytest.approx(142, abs=0.5)


def test_censoring_closed_form_by_quadrature():
    from scipy import integrate

    c = DESIGN_CONFIG
    total = 0.0
    for x, px in ((0, 0.5), (1, 0.5)):
        lam = c.lambda0 * math.exp(c.theta * x)
        val, _ = integrate.quad(lambda u: math.exp(-lam * u) / c.cens_upper, 0, c.cens_upper)
        total += px * val
    assert expected_censoring(c) == pytest.approx(total, rel=1e-12)


def test_design_structure():
    s = generate_cox_sample(CoxSimConfig(seed=1))
    validate_sample(s)
    assert s.N == 400
    events = s.stratum == 1
    assert np.all(s.delta[events] == 1) and np.all(s.delta[~events] == 0)
    assert np.all(s.xi[events] == 1)
    assert np.all(s.v[s.stratum == 2, 0] == 0) and np.all(s.v[s.stratum == 3, 0] == 1)
    for spec in s.strata:
        if spec.stratum_id != 1:
            assert spec.n_j == math.floor(0.3 * spec.N_j + 1e-9)
    assert np.all(np.isnan(s.x[s.xi == 0]))
    assert set(np.unique(s.x[s.xi == 1])) <= {0.0, 1.0}


def test_seed_reproducible():
    a = generate_cox_sample(CoxSimConfig(seed=5))
    b = generate_cox_sample(CoxSimConfig(seed=5))
    assert np.array_equal(a.y, b.y) and np.array_equal(a.xi, b.xi)


def test_perfect_surrogate():
    s = generate_cox_sample(CoxSimConfig(N=500, sens=1.0, spec=1.0, phase2_fraction=1.0, seed=2))
    assert np.array_equal(s.v[:, 0], s.x[:, 0])


def test_null_effect():
    N = 20000
    s = generate_cox_sample(CoxSimConfig(N=N, theta=0.0, phase2_fraction=1.0, seed=4))
    x, d = s.x[:, 0], s.delta.astype(float)
    X = np.column_stack([np.ones(N), x])
    beta, *_ = np.linalg.lstsq(X, d, rcond=None)
    resid = d - X @ beta
    cov = np.linalg.inv(X.T @ X) * resid.var(ddof=2)
    assert abs(beta[1]) <= 3 * np.sqrt(cov[1, 1])


def test_degenerate_stratum():
    with pytest.raises(DegenerateStratum):
        generate_cox_sample(CoxSimConfig(N=5, lambda0=1e-9, seed=0))


@pytest.mark.parametrize("kw", [{"sens": 0.0}, {"spec": 1.2}, {"exposure_prev": 1.0},
                                {"phase2_fraction": 0.0}, {"lambda0": -1.0}, {"N": 2}])
def test_invalid_config(kw):
    with pytest.raises(DataError):
        generate_cox_sample(CoxSimConfig(seed=0, **kw))
