import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manlyem import (
    ComponentParams,
    Dataset,
    closed_form_updates,
    gradient_O,
    hessian_O,
    manly_forward,
    newton_lambda_step,
    objective_O,
)
from manlyem.exceptions import EmptyComponentError
from manlyem.newton import SafeguardOptions, safeguarded_newton_step

from conftest import random_component, random_spd


def fd_gradient(data, z, comp, h=1e-6):
    out = np.empty(comp.p)
    for k in range(comp.p):
        e = np.zeros(comp.p)
        e[k] = h
        out[k] = (objective_O(data, z, comp.replace(lam=comp.lam + e))
                  - objective_O(data, z, comp.replace(lam=comp.lam - e))) / (2 * h)
    return out


def fd_hessian(data, z, comp, h=1e-5):
    out = np.empty((comp.p, comp.p))
    for k in range(comp.p):
        e = np.zeros(comp.p)
        e[k] = h
        out[:, k] = (gradient_O(data, z, comp.replace(lam=comp.lam + e))
                     - gradient_O(data, z, comp.replace(lam=comp.lam - e))) / (2 * h)
    return out


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


class TestGradient:
    def test_mean_at_transformed_point(self):
        x = np.array([[0.7, -1.2]])
        lam = np.array([0.4, 1.1])
        comp = ComponentParams(1.0, manly_forward(x[0], lam), np.eye(2), lam)
        np.testing.assert_allclose(gradient_O(Dataset(x), [1.0], comp), -x[0], atol=1e-15)

    def test_zero_weights(self, rng):
        comp = random_component(rng, 3)
        data = Dataset(rng.uniform(-2, 2, size=(6, 3)))
        np.testing.assert_array_equal(gradient_O(data, np.zeros(6), comp), np.zeros(3))

    def test_finite_difference(self, rng):
        comp = random_component(rng, 3)
        data = Dataset(rng.uniform(-2, 2, size=(6, 3)))
        z = rng.uniform(size=6)
        assert rel_err(gradient_O(data, z, comp), fd_gradient(data, z, comp)) < 1e-5

    def test_taylor_branch_at_zero(self, rng):
        sigma = random_spd(rng, 2)
        mu = rng.normal(size=2)
        comp = ComponentParams(1.0, mu, sigma, [0.0, 0.0])
        x = rng.uniform(-2, 2, size=(8, 2))
        z = rng.uniform(size=8)
        prec = np.linalg.inv(sigma)
        ref = -sum(zi * ((prec @ mu - prec @ xi) * xi**2 / 2 + xi) for zi, xi in zip(z, x))
        np.testing.assert_allclose(gradient_O(Dataset(x), z, comp), ref, rtol=1e-12)


class TestHessian:
    def test_mean_at_transformed_point(self):
        x = np.array([[0.7, -1.2]])
        lam = np.array([0.4, 1.1])
        sigma = np.array([[2.0, 0.5], [0.5, 1.0]])
        comp = ComponentParams(1.0, manly_forward(x[0], lam), sigma, lam)
        w =(lam * x[0] * np.exp(lam * x[0]) - np.exp(lam * x[0]) + 1) / lam**2
        np.testing.assert_allclose(hessian_O(Dataset(x), [1.0], comp), np.linalg.inv(sigma) * np.outer(w, w), rtol=1e-12)

    def test_zero_weights(self, rng):
        comp = random_component(rng, 3)
        data = Dataset(rng.uniform(-2, 2, size=(6, 3)))
        np.testing.assert_array_equal(hessian_O(data, np.zeros(6), comp), np.zeros((3, 3)))

    def test_finite_difference_and_symmetry(self, rng):
        comp = random_component(rng, 3)
        data = Dataset(rng.uniform(-2, 2, size=(6, 3)))
        z = rng.uniform(size=6)
        H = hessian_O(data, z, comp)
        assert rel_err(H, fd_hessian(data, z, comp)) < 1e-4
        assert np.max(np.abs(H - H.T)) < 1e-10

    def test_continuity_above_threshold(self, rng):
        # just past the limit branch the derivatives move by O(lambda)
        comp0 = ComponentParams(1.0, rng.normal(size=2), random_spd(rng, 2), [0.0, 0.0])
        data = Dataset(rng.uniform(-2, 2, size=(10, 2)))
        z = rng.uniform(size=10)
        g0, h0 = gradient_O(data, z, comp0), hessian_O(data, z, comp0)
        comp1 = comp0.replace(lam=[2e-8, -2e-8])
        assert np.max(np.abs(gradient_O(data, z, comp1) - g0)) < 1e-5
        assert np.max(np.abs(hessian_O(data, z, comp1) - h0)) < 1e-5


class TestSafeguardedStep:
    def test_stationary_point(self):
        a = np.array([0.3, -0.2])
        rep = safeguarded_newton_step(
            lambda lam: float(np.sum((lam - a) ** 2)),
            lambda lam: (2 * (lam - a), 2 * np.eye(2)),
            a,
        )
        np.testing.assert_array_equal(rep.lambda_new, a)
        assert rep.damping_exponent == 0 and not rep.fallback_used

    def test_identity_hessian_full_step(self):
        g = np.array([0.5, -1.0])
        lam = np.array([1.0, 2.0])
        rep = safeguarded_newton_step(
            lambda l: 0.5 * float(np.sum((l - lam + g) ** 2)),
            lambda l: (l - lam + g, np.eye(2)),
            lam,
        )
        np.testing.assert_array_equal(rep.lambda_new, lam - g)
        assert rep.damping_exponent == 0

    def test_halving_when_full_step_overshoots(self):
        # f(l) = |l|^1.5 with a quadratic model that overshoots; halving must kick in
        f = lambda l: float(np.abs(l[0]) ** 1.5 + 10 * (l[0] > 3))
        deriv = lambda l: (np.array([1.5 * np.sign(l[0]) * abs(l[0]) ** 0.5]), np.array([[0.1]]))
        rep = safeguarded_newton_step(f, deriv, np.array([1.0]))
        assert rep.damping_exponent > 0
        assert rep.objective_after <= rep.objective_before

    def test_indefinite_hessian_still_descends(self):
        f = lambda l: float(l[0] ** 2 + l[1] ** 2)
        deriv = lambda l: (2 * l, np.array([[-1.0, 0.0], [0.0, -1.0]]))
        rep = safeguarded_newton_step(f, deriv, np.array([1.0, 1.0]))
        assert rep.objective_after <= rep.objective_before

    def test_fallback_gradient_descent(self):
        # a Hessian pointing uphill forces the descent fallback
        f = lambda l: float(l[0] ** 2)
        deriv = lambda l: (np.array([2 * l[0]]), np.array([[-1e-3]]))
        rep = safeguarded_newton_step(f, deriv, np.array([1.0]), SafeguardOptions(max_halvings=3))
        assert rep.fallback_used
        assert rep.objective_after < rep.objective_before

    def test_nothing_works_returns_input(self):
        f = lambda l: 0.0 if l[0] == 1.0 else 1.0
        deriv = lambda l: (np.array([1.0]), np.array([[1.0]]))
        rep = safeguarded_newton_step(f, deriv, np.array([1.0]), SafeguardOptions(max_halvings=2, max_backtracks=3))
        np.testing.assert_array_equal(rep.lambda_new, [1.0])
        assert rep.fallback_used

    def test_overflowing_candidate_rejected(self):
        # a step that would overflow the transform must not be accepted
        x = np.array([[300.0], [1.0], [2.0]])
        comp = ComponentParams(1.0, [0.5], [[1.0]], [0.0])
        rep = newton_lambda_step(Dataset(x), np.ones(3), comp)
        assert np.isfinite(rep.objective_after)
        assert rep.objective_after <= rep.objective_before


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.sampled_from([1, 2, 3]))
def test_newton_step_never_increases_objective(seed, p):
    rng = np.random.default_rng(seed)
    comp = random_component(rng, p)
    data = Dataset(rng.uniform(-2, 2, size=(20, p)))
    z = rng.uniform(size=20)
    rep = newton_lambda_step(data, z, comp)
    before = objective_O(data, z, comp)
    after = objective_O(data, z, comp.replace(lam=rep.lambda_new))
    assert after <= before + 1e-10
    assert rep.objective_after == pytest.approx(after, rel=1e-12, abs=1e-12)


class TestClosedForm:
    def test_zero_scatter_gets_ridge(self):
        data = Dataset([[1.5], [1.5]])
        model = closed_form_updates(data, np.ones((2, 1)), [[0.0]], n_min=2)
        c = model.components[0]
        assert c.mu[0] == 1.5
        assert c.sigma[0, 0] == pytest.approx(1e-6)

    def test_unweighted_gaussian_mle(self, rng):
        x = rng.normal(size=(40, 3))
        c = closed_form_updates(Dataset(x), np.ones((40, 1)), [np.zeros(3)]).components[0]
        np.testing.assert_allclose(c.mu, x.mean(axis=0), rtol=1e-13)
        np.testing.assert_allclose(c.sigma, np.cov(x.T, bias=True), rtol=1e-12)
        assert c.pi == 1.0

    def test_weighted_double_loop_oracle(self, rng):
        n, p = 30, 2
        x = rng.uniform(-2, 2, size=(n, p))
        a = rng.uniform(size=n)
        resp = np.column_stack([a, 1 - a])
        lams = [rng.uniform(-1, 1, size=p), rng.uniform(-1, 1, size=p)]
        model = closed_form_updates(Dataset(x), resp, lams)
        for g, comp in enumerate(model.components):
            y = np.expm1(lams[g] * x) / lams[g]
            ng = sum(resp[i, g] for i in range(n))
            mu = [sum(resp[i, g] * y[i, k] for i in range(n)) / ng for k in range(p)]
            sig = [[sum(resp[i, g] * (y[i, k] - mu[k]) * (y[i, l] - mu[l]) for i in range(n)) / ng
                    for l in range(p)] for k in range(p)]
            assert comp.pi == pytest.approx(ng / n, rel=1e-14)
            np.testing.assert_allclose(comp.mu, mu, rtol=1e-12)
            np.testing.assert_allclose(comp.sigma, sig, rtol=1e-12)

    def test_empty_component(self, rng):
        x = rng.normal(size=(10, 2))
        resp = np.zeros((10, 2))
        resp[:, 0] = 1.0
        resp[0] = [0.0, 1.0]
        with pytest.raises(EmptyComponentError) as info:
            closed_form_updates(Dataset(x), resp, [np.zeros(2), np.zeros(2)])
        assert info.value.component == 1
