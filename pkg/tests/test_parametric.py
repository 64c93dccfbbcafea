from fractions import Fraction

import numpy as np
import pytest
from scipy import optimize
from scipy.special import expit, logsumexp

from knnroc.data import CutPair, Dataset
from knnroc.errors import EstimationError, NumericalError, ValidationError
from knnroc.estimates import complete_data_tcf
from knnroc.parametric import (
    Formula,
    NuisanceEstimates,
    estimate_nuisance,
    estimate_tcf_fi,
    estimate_tcf_ipw,
    estimate_tcf_msi,
    estimate_tcf_spe,
    fit_binary_logit,
    fit_multinomial_logit,
    ipw_weights,
    msi_weights,
    spe_weights,
)
from knnroc.simulation import ScenarioIConfig, ScenarioIIConfig, generate_scenario_i, generate_scenario_ii

from conftest import make_dataset


def binary_mle_oracle(x, y):
    def nll(b):
        eta = x @ b
        return np.sum(np.logaddexp(0, eta) - y * eta)

    def grad(b):
        return x.T @ (expit(x @ b) - y)

    return optimize.minimize(nll, np.zeros(x.shape[1]), jac=grad, method="BFGS", options={"gtol": 1e-10}).x


def multinomial_mle_oracle(x, labels):
    y = np.eye(3)[labels - 1]
    m = x.shape[1]

    def nll(flat):
        eta = np.column_stack([x @ flat.reshape(2, m).T, np.zeros(len(x))])
        return -(np.sum(y * eta) - np.sum(logsumexp(eta, axis=1)))

    return optimize.minimize(nll, np.zeros(2 * m), method="BFGS", options={"gtol": 1e-9}).x.reshape(2, m)


class TestFormula:
    def test_power_parsing(self):
        f = Formula.parse("t, a1^2/3")
        assert [(t.variable, t.power) for t in f.terms] == [("t", 1), ("a1", Fraction(2, 3))]
        assert Formula.parse("a1^(2/3)") == Formula.parse("a1^2/3")

    def test_design_includes_intercept_and_real_root(self):
        ds = Dataset([1.0, 2.0], [[-8.0], [27.0]], [1, 1], [1, 2])
        x = Formula.parse("t,a1^2/3").design(ds)
        np.testing.assert_allclose(x, [[1, 1, 4], [1, 2, 9]])
        np.testing.assert_allclose(Formula.parse("a1^1/3").design(ds)[:, 1], [-2, 3])

    def test_even_root_of_negative_rejected(self):
        ds = Dataset([1.0], [[-4.0]], [1], [1])
        with pytest.raises(ValidationError):
            Formula.parse("a1^1/2").design(ds)

    @pytest.mark.parametrize("text", ["", "x", "t^0", "a1^", "t*a1"])
    def test_bad_formulas(self, text):
        with pytest.raises(ValidationError):
            Formula.parse(text)

    def test_unknown_covariate(self, rng):
        with pytest.raises(ValidationError):
            Formula.parse("a3").design(make_dataset(rng, 5))


class TestBinaryLogit:
    def test_matches_generic_optimizer(self, rng):
        x = np.column_stack([np.ones(400), rng.normal(size=(400, 2))])
        y = (rng.random(400) < expit(x @ [0.3, -0.8, 0.5])).astype(float)
        fit = fit_binary_logit(x, y)
        assert fit.converged
        np.testing.assert_allclose(fit.coefficients, binary_mle_oracle(x, y), atol=1e-5)

    def test_large_sample_recovery(self):
        ds = generate_scenario_i(ScenarioIConfig(n=100_000, seed=1))
        x = Formula.parse("t,a1").design(ds)
        fit = fit_binary_logit(x, ds.v)
        mu = expit(x @ fit.coefficients)
        se = np.sqrt(np.diag(np.linalg.inv((x * (mu * (1 - mu))[:, None]).T @ x)))
        assert np.all(np.abs(fit.coefficients - [0.5, -0.3, 0.75]) < 3 * se)

    def test_balanced_independent_response(self, rng):
        x = np.column_stack([np.ones(2000), rng.normal(size=2000)])
        y = np.tile([0.0, 1.0], 1000)
        fit = fit_binary_logit(x, y)
        assert abs(fit.coefficients[0]) < 0.1 and abs(fit.coefficients[1]) < 0.1

    def test_separation_flagged(self):
        x = np.column_stack([np.ones(6), [-3, -2, -1, 1, 2, 3]])
        fit = fit_binary_logit(x, np.array([0, 0, 0, 1, 1, 1.0]))
        assert not fit.converged

    def test_degenerate_response(self):
        with pytest.raises(EstimationError, match="degenerate response"):
            fit_binary_logit(np.ones((4, 1)), np.ones(4))


class TestMultinomialLogit:
    def test_matches_generic_optimizer(self, rng):
        x = np.column_stack([np.ones(500), rng.normal(size=500)])
        eta = np.column_stack([x @ [0.2, 1.0], x @ [-0.1, 0.4], np.zeros(500)])
        p = np.exp(eta - logsumexp(eta, axis=1, keepdims=True))
        labels = np.array([rng.choice(3, p=row) for row in p]) + 1
        fit = fit_multinomial_logit(x, labels)
        assert fit.converged
        np.testing.assert_allclose(fit.coefficients, multinomial_mle_oracle(x, labels), atol=1e-4)
        np.testing.assert_allclose(fit.predict(x).sum(axis=1), 1.0)

    def test_intercept_only_closed_form(self, rng):
        labels = np.repeat([1, 2, 3], [400, 350, 250])
        x = np.column_stack([np.ones(1000), rng.normal(size=1000)])
        fit = fit_multinomial_logit(x, labels)
        np.testing.assert_allclose(fit.coefficients[:, 0], [np.log(0.4 / 0.25), np.log(0.35 / 0.25)], atol=0.05)
        assert np.all(np.abs(fit.coefficients[:, 1]) < 0.1)

    def test_single_class(self):
        with pytest.raises(EstimationError, match="degenerate response"):
            fit_multinomial_logit(np.ones((5, 1)), np.full(5, 2))


class TestNuisance:
    def test_misspecified_formulas_accepted(self):
        ds = generate_scenario_ii(ScenarioIIConfig(n=1000, seed=2))
        nu = estimate_nuisance(ds, "t", "t,a1^2/3")
        assert nu.disease_model.coefficients.shape == (2, 2)
        assert nu.verification_model.coefficients.shape == (3,)
        assert np.all((nu.pi_hat > 0) & (nu.pi_hat < 1))

    def test_all_verified_uses_all_units(self, rng):
        ds = make_dataset(rng, 60, all_verified=True)
        nu = estimate_nuisance(ds)
        np.testing.assert_array_equal(nu.pi_hat, 1.0)
        assert nu.verification_model is None
        direct = fit_multinomial_logit(Formula.full(1).design(ds), ds.d)
        np.testing.assert_array_equal(nu.disease_model.coefficients, direct.coefficients)

    def test_nonconvergence_warns(self):
        t = np.array([-3, -2, -1, 1, 2, 3, 4.0])
        ds = Dataset(t, np.zeros((7, 1)) + t[:, None] ** 2, [1, 1, 1, 1, 1, 1, 0], [1, 1, 2, 3, 3, 3, 0])
        with pytest.warns(RuntimeWarning, match="did not converge"):
            estimate_nuisance(ds, "t", "t")


class TestParametricEstimators:
    def oracle_nuisance(self, ds):
        return NuisanceEstimates(ds.onehot().astype(float), np.ones(ds.n))

    def test_reduce_to_complete_data(self, rng):
        ds = make_dataset(rng, 50, all_verified=True)
        cut = CutPair(1.5, 2.5)
        nu = self.oracle_nuisance(ds)
        ref = complete_data_tcf(ds, cut).tcf
        for fn in (estimate_tcf_fi, estimate_tcf_msi, estimate_tcf_ipw, estimate_tcf_spe):
            assert np.array_equal(fn(ds, nu, cut).tcf, ref)

    def test_weight_forms(self, rng):
        ds = make_dataset(rng, 40)
        rho = rng.dirichlet(np.ones(3), ds.n)
        pi = rng.uniform(0.2, 0.9, ds.n)
        nu = NuisanceEstimates(rho, pi)
        v = ds.v[:, None]
        d = ds.onehot()
        np.testing.assert_allclose(msi_weights(ds, nu), v * d + (1 - v) * rho)
        np.testing.assert_allclose(ipw_weights(ds, nu), v * d / pi[:, None])
        np.testing.assert_allclose(spe_weights(ds, nu), v * d / pi[:, None] - rho * (v - pi[:, None]) / pi[:, None])

    def test_propensity_floor(self, rng):
        ds = make_dataset(rng, 30)
        pi = np.full(ds.n, 0.5)
        pi[0] = 1e-5
        nu = NuisanceEstimates(ds.onehot() + 0.0, pi)
        with pytest.raises(NumericalError, match="units 1"):
            ipw_weights(ds, nu)
        w = ipw_weights(ds, nu, clamp=True)
        assert np.isfinite(w).all()

    def test_spe_may_leave_unit_interval(self):
        # verified units with small propensity and a poor disease model push SPE outside [0,1]
        t = np.array([0.0, 0.1, 0.2, 3.0, 3.1, 5.0, 5.1, 5.2])
        ds = Dataset(t, np.zeros((8, 1)), [1, 0, 0, 1, 0, 1, 1, 0], [1, 0, 0, 2, 0, 3, 3, 0])
        rho = np.tile([0.1, 0.1, 0.8], (8, 1))
        pi = np.array([0.2, 0.5, 0.5, 0.5, 0.5, 0.9, 0.9, 0.5])
        est = estimate_tcf_spe(ds, NuisanceEstimates(rho, pi), CutPair(1, 4))
        assert est.out_of_range
        assert np.any((est.tcf < 0) | (est.tcf > 1))
