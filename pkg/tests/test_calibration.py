import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from conftest import make_sample, random_design
from twophaseboot.calibration import (
    DEFAULT_G,
    VARIANTS,
    GFunction,
    auxiliary_matrix,
    calibration_residual,
    check_boot_variant,
    g_deriv,
    g_eval,
    project_Q,
    solve_calibration,
)
from twophaseboot.errors import (
    Collinear,
    DataError,
    NoConvergence,
    SingularMoment,
    VariantRequiresWeights,
)


def dense_residual(sample, V, alpha, variant, w2=None):
    """Unit-by-unit evaluation of the calibration equations."""
    N, k = V.shape
    pi = sample.pi0()
    xi = sample.xi
    mean_v = [sum(V[i, c] for i in range(N)) / N for c in range(k)]
    ipw_v = [sum(xi[i] / pi[i] * V[i, c] for i in range(N)) / N for c in range(k)]
    out = np.zeros(k)
    for i in range(N):
        if not xi[i]:
            continue
        a = 1.0 / pi[i] * (1.0 if w2 is None else w2[i])
        if variant in ("cc", "bcc", "bscc"):
            arg = sum((1 / pi[i] - 1) * (V[i, c] - mean_v[c]) * alpha[c] for c in range(k))
            center = ipw_v if variant == "bscc" else mean_v
            rhs = [V[i, c] - center[c] for c in range(k)]
        else:
            arg = sum(V[i, c] * alpha[c] for c in range(k))
            rhs = list(V[i])
        gv = 2.0 / (1.0 + np.exp(-2.0 * arg))
        out += a * gv * np.array(rhs) / N
    if variant in ("c", "bc"):
        out -= mean_v
    elif variant == "bsc":
        out -= ipw_v
    return out


def dense_solve(sample, V, variant, w2=None):
    sol = optimize.root(lambda a: dense_residual(sample, V, a, variant, w2),
                        np.zeros(V.shape[1]), method="hybr", tol=1e-13)
    assert np.max(np.abs(dense_residual(sample, V, sol.x, variant, w2))) < 1e-12
    return sol.x


def toy_aux(sample):
    return np.column_stack([np.ones(sample.N), sample.v[:, 0]])


class TestG:
    def test_normalisation(self):
        assert g_eval(0.0) == 1.0
        assert g_deriv(0.0) == pytest.approx(1.0, rel=1e-15)

    def test_limits(self):
        assert abs(g_eval(50.0) - 2.0) <= 1e-9
        assert abs(g_eval(-50.0) - 0.0) <= 1e-9

    @pytest.mark.parametrize("t", [-1.0, 0.0, 1.0])
    def test_derivative(self, t):
        h = 1e-5
        fd = (g_eval(t + h) - g_eval(t - h)) / (2 * h)
        assert abs(g_deriv(t) - fd) <= 1e-6

    def test_custom_bounds(self):
        g = GFunction(lower=0.5, upper=4.0, sigma=1.0)
        assert g(0.0) == pytest.approx(1.0, abs=1e-15)
        assert g(-60) == pytest.approx(0.5) and g(60) == pytest.approx(4.0)

    @pytest.mark.parametrize("kw", [{"lower": 1.0}, {"upper": 0.9}, {"sigma": 0.0}])
    def test_invalid(self, kw):
        with pytest.raises(DataError):
            GFunction(**kw)


class TestResidual:
    def test_census_zero(self):
        s = make_sample([1] * 5, [1] * 5, v=np.arange(5.0), x=np.ones(5))
        V = toy_aux(s)
        assert np.all(calibration_residual(s, None, np.zeros(2), "c", V=V) == 0)

    def test_centered_at_zero(self, toy6):
        r = calibration_residual(toy6, None, np.zeros(1), "cc")
        v = toy6.v[:, 0]
        expected = np.sum(toy6.ipw() * (v - v.mean())) / toy6.N
        assert r[0] == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_matches_dense(self, toy6, variant):
        V = toy_aux(toy6) if variant in ("c", "bc", "bsc") else toy6.v
        w2 = np.array([1.0, 1.0, 0.0, 0.0, 2.0, 0.0])
        alpha = np.array([0.3, -0.2])[:V.shape[1]]
        got = calibration_residual(toy6, w2, alpha, variant, V=V)
        want = dense_residual(toy6, V, alpha, variant, w2 if variant.startswith("b") else None)
        assert np.allclose(got, want, atol=1e-14)


class TestSolve:
    def test_toy_against_dense(self, toy6):
        V = toy_aux(toy6)
        res = solve_calibration(toy6, "c", V=V, tol=1e-12)
        assert res.residual_norm < 1e-10
        assert np.all(np.abs(calibration_residual(toy6, None, res.alpha_hat, "c", V=V)) < 1e-10)
        assert np.allclose(res.alpha_hat, dense_solve(toy6, V, "c"), atol=1e-8)

    @pytest.mark.parametrize("variant", ["cc", "bcc", "bscc", "bsc"])
    def test_other_variants_against_dense(self, toy6, variant):
        V = toy_aux(toy6) if variant == "bsc" else toy6.v
        w2 = np.array([1.0, 1.0, 0.0, 0.0, 2.0, 0.0])
        w = w2 if variant.startswith("b") else None
        res = solve_calibration(toy6, variant, w2=w, V=V)
        assert np.allclose(res.alpha_hat, dense_solve(toy6, V, variant, w), atol=1e-8)

    @pytest.mark.parametrize("variant", ["c", "cc"])
    def test_census_immediate(self, variant):
        s = make_sample([1] * 5, [1] * 5, v=np.arange(5.0), x=np.ones(5))
        V = toy_aux(s) if variant == "c" else s.v
        res = solve_calibration(s, variant, V=V)
        assert res.iterations == 0 and np.all(res.alpha_hat == 0)
        assert np.all(res.g_values == 1)

    def test_infeasible(self):
        # the sampled units can reach at most twice their IPW total, far below the target
        s = make_sample([1] * 4, [1, 1, 0, 0], v=np.array([1.0, 1.0, 100.0, 100.0]),
                        x=np.ones(4))
        with pytest.raises(NoConvergence) as info:
            solve_calibration(s, "c")
        assert info.value.residual_norm > 1

    def test_bc_with_unit_weights_is_c(self, toy6):
        V = toy_aux(toy6)
        a = solve_calibration(toy6, "c", V=V)
        b = solve_calibration(toy6, "bc", w2=toy6.xi.astype(float), V=V)
        assert np.max(np.abs(a.alpha_hat - b.alpha_hat)) <= 1e-10
        assert np.max(np.abs(a.g_values - b.g_values)) <= 1e-10

    @pytest.mark.parametrize("variant", ["bsc", "bscc"])
    def test_single_variants_trivial_at_unit_weights(self, toy6, variant):
        V = toy_aux(toy6) if variant == "bsc" else toy6.v
        res = solve_calibration(toy6, variant, w2=toy6.xi.astype(float), V=V)
        assert np.max(np.abs(res.alpha_hat)) <= 1e-12

    def test_requires_weights(self, toy6):
        with pytest.raises(VariantRequiresWeights):
            solve_calibration(toy6, "bc")

    def test_collinear(self, toy6):
        V = np.column_stack([toy6.v[:, 0], 2 * toy6.v[:, 0]])
        with pytest.raises(Collinear):
            solve_calibration(toy6, "c", V=V)

    def test_unknown_variant(self, toy6):
        with pytest.raises(DataError):
            solve_calibration(toy6, "raking")

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_random_designs_meet_tolerance(self, seed):
        rng = np.random.default_rng(seed)
        s = random_design(rng)
        V = s.v
        from twophaseboot.weights import phase2_weights

        w2 = phase2_weights(s, rng)
        for variant in VARIANTS:
            Vv = np.column_stack([np.ones(s.N), V]) if variant in ("c", "bc", "bsc") else V
            try:
                res = solve_calibration(s, variant, w2=w2 if variant.startswith("b") else None,
                                        V=Vv)
            except (NoConvergence, Collinear):
                continue
            r = calibration_residual(s, w2, res.alpha_hat, variant, V=Vv)
            assert np.max(np.abs(r)) <= 1e-9


class TestProjection:
    def test_span_reproduced(self, toy6):
        V = toy_aux(toy6)
        v = toy6.v[:, 0]
        assert np.allclose(project_Q(v, toy6, "c", V=V), v, atol=1e-12)

    def test_constant_single_stratum(self):
        rng = np.random.default_rng(0)
        s = make_sample([1] * 8, [1, 0] * 4, v=rng.normal(size=8), x=np.ones(8))
        assert np.allclose(project_Q(np.full(8, 3.0), s, "cc"), 0, atol=1e-12)

    def test_constant_within_stratum_centered(self, toy6):
        V = auxiliary_matrix(toy6, "wcc", base=toy6.v)
        assert np.allclose(project_Q(np.full(6, 3.0), toy6, "cc", V=V), 0, atol=1e-12)

    def test_least_squares_oracle(self, toy6):
        f = np.array([0.3, -1.0, 2.5, 0.7, 1.1, -0.4])
        V = toy_aux(toy6)
        coef, *_ = np.linalg.lstsq(V, f, rcond=None)
        assert np.allclose(project_Q(f, toy6, "c", V=V), V @ coef, atol=1e-10)
        Vt = toy6.v - toy6.v.mean(axis=0)
        sh = np.sqrt(1 / toy6.pi0() - 1)
        coef, *_ = np.linalg.lstsq(sh[:, None] * Vt, sh * f, rcond=None)
        assert np.allclose(project_Q(f, toy6, "cc"), Vt @ coef, atol=1e-10)

    def test_weighted_moments(self, toy6):
        f = np.array([0.3, -1.0, 2.5, np.nan, 1.1, np.nan])
        V = toy_aux(toy6)
        a = toy6.ipw()
        M = sum(np.outer(V[i], V[i]) for i in range(6)) / 6
        c = sum(a[i] * f[i] * V[i] for i in range(6) if a[i] > 0) / 6
        want = V @ np.linalg.solve(M, c)
        assert np.allclose(project_Q(f, toy6, "c", V=V, weights=a), want, atol=1e-12)

    def test_idempotent(self, toy6):
        f = np.array([0.3, -1.0, 2.5, 0.7, 1.1, -0.4])
        for variant, V in (("c", toy_aux(toy6)), ("cc", toy6.v)):
            q = project_Q(f, toy6, variant, V=V)
            assert np.allclose(project_Q(q, toy6, variant, V=V), q, atol=1e-10)

    def test_matrix_input(self, toy6):
        F = np.column_stack([np.ones(6), toy6.v[:, 0]])
        Q = project_Q(F, toy6, "c", V=toy_aux(toy6))
        assert Q.shape == (6, 2) and np.allclose(Q, F, atol=1e-12)

    def test_singular(self, toy6):
        with pytest.raises(SingularMoment):
            project_Q(np.ones(6), toy6, "c", V=np.zeros((6, 1)))


class TestAuxiliary:
    def test_methods(self, toy6):
        y = toy6.y
        assert np.array_equal(auxiliary_matrix(toy6, "c"), np.column_stack([np.ones(6), y]))
        assert np.array_equal(auxiliary_matrix(toy6, "cc"), y[:, None])
        W = auxiliary_matrix(toy6, "wcc")
        # stratum 1 is sampled in full and contributes no column
        assert W.shape == (6, 1)
        inside = toy6.stratum == 2
        assert np.all(W[~inside] == 0)
        assert np.allclose(W[inside, 0], y[inside] - y[inside].mean())

    def test_wcc_needs_subsampled_stratum(self):
        s = make_sample([1, 1], [1, 1], x=np.ones(2))
        with pytest.raises(Collinear):
            auxiliary_matrix(s, "wcc")

    @pytest.mark.parametrize("method,boot,ok", [("c", "bc", True), ("c", "bsc", True),
                                                ("cc", "bcc", True), ("wcc", "bscc", True),
                                                ("c", "bcc", False), ("wcc", "bc", False),
                                                ("none", "bc", False)])
    def test_boot_variant_pairing(self, method, boot, ok):
        if ok:
            check_boot_variant(method, boot)
        else:
            with pytest.raises(DataError):
                check_boot_variant(method, boot)


def test_default_g_is_module_default():
    assert DEFAULT_G == GFunction(0.0, 2.0, 2.0)
