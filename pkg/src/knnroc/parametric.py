"""Logistic working models and the FI / MSI / IPW / SPE comparator estimators.

Disease is modelled by a multinomial logit (class 3 as reference) fitted on
verified units only; verification by a binary logit fitted on all units.
Both fits are Newton-Raphson (IRLS) with step halving.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import expit, logsumexp

from .data import CutPair, Dataset
from .errors import EstimationError, NumericalError, ValidationError
from .estimates import EstimatorTag, TcfEstimate, tcf_from_weights

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
PROPENSITY_FLOOR = 1e-3


# -------------------------------------------------------------------- formulas


@dataclass(frozen=True)
class Term:
    variable: str
    power: Fraction | float = 1

    def label(self) -> str:
        return self.variable if self.power == 1 else f"{self.variable}^{self.power}"


def _parse_power(text: str) -> Fraction | float:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ValidationError(f"malformed power {text!r}") from None


def _real_power(x: np.ndarray, power: Fraction) -> np.ndarray:
    """``x**power`` on the reals; odd-denominator roots of negatives keep their sign."""
    if power == 1:
        return x
    if power.denominator == 1:
        return x ** int(power)
    mag = np.abs(x) ** float(power)
    if power.denominator % 2 == 1:
        sign = np.sign(x) ** (power.numerator % 2)
        return np.where(x < 0, sign * mag, mag)
    if np.any(x < 0):
        raise ValidationError(f"power {power} of a negative value is not real")
    return mag


@dataclass(frozen=True)
class Formula:
    """Comma-separated predictors over ``t`` and ``a1..ap`` with optional powers.

    ``"t,a1^2/3"`` gives the design ``[1, t, a1**(2/3)]``. Fractional powers
    with an odd denominator act as real roots, so negative inputs are allowed.
    """

    terms: tuple[Term, ...]

    @classmethod
    def parse(cls, text: str) -> "Formula":
        terms = []
        for raw in text.split(","):
            raw = raw.strip()
            if not raw:
                continue
            m = re.fullmatch(r"(t|a\d+)(?:\^\(?([-+0-9./]+)\)?)?", raw)
            if not m:
                raise ValidationError(f"cannot parse formula term {raw!r}")
            power = _parse_power(m[2]) if m[2] else Fraction(1)
            if power == 0:
                raise ValidationError(f"power 0 in term {raw!r} duplicates the intercept")
            terms.append(Term(m[1], power))
        if not terms:
            raise ValidationError("formula needs at least one term")
        return cls(tuple(terms))

    @classmethod
    def full(cls, p: int) -> "Formula":
        return cls((Term("t"),) + tuple(Term(f"a{j}") for j in range(1, p + 1)))

    def __str__(self) -> str:
        return ",".join(t.label() for t in self.terms)

    def design(self, dataset: Dataset) -> np.ndarray:
        cols = [np.ones(dataset.n)]
        for term in self.terms:
            if term.variable == "t":
                x = dataset.t
            else:
                j = int(term.variable[1:])
                if not 1 <= j <= dataset.p:
                    raise ValidationError(f"formula references {term.variable} but p={dataset.p}")
                x = dataset.a[:, j - 1]
            cols.append(_real_power(x, term.power))
        return np.column_stack(cols)


def _as_formula(f: Formula | str | None, p: int) -> Formula:
    if f is None:
        return Formula.full(p)
    return Formula.parse(f) if isinstance(f, str) else f


# ------------------------------------------------------------------- IRLS fits


@dataclass(frozen=True, eq=False)
class LogitModel:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def predict(self, design: np.ndarray) -> np.ndarray:
        return expit(design @ self.coefficients)


@dataclass(frozen=True, eq=False)
class MultinomialLogitModel:
    """Rows are classes 1 and 2; class 3 has implicit zero coefficients."""

    coefficients: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def predict(self, design: np.ndarray) -> np.ndarray:
        return _softmax_ref(design @ self.coefficients.T)


def _softmax_ref(eta: np.ndarray) -> np.ndarray:
    full = np.column_stack([eta, np.zeros(eta.shape[0])])
    return np.exp(full - logsumexp(full, axis=1, keepdims=True))


def _check_design(x: np.ndarray, n_resp: int) -> None:
    if x.ndim != 2 or x.shape[0] != n_resp:
        raise ValidationError("design and response lengths differ")
    if x.shape[0] <= x.shape[1]:
        raise ValidationError(f"need more observations ({x.shape[0]}) than parameters ({x.shape[1]})")


def _rel_change(step: np.ndarray, beta: np.ndarray) -> float:
    return float(np.max(np.abs(step)) / max(np.max(np.abs(beta)), 1.0))


def _binary_loglik(x, y, beta):
    eta = x @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_binary_logit(
    features: np.ndarray, response: np.ndarray, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL
) -> LogitModel:
    """Maximum-likelihood logistic regression; ``features`` includes the intercept column.

    Separation (fitted probabilities collapsing onto the 0/1 response) stops
    the iterations and returns ``converged=False``.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(response, dtype=float)
    _check_design(x, y.shape[0])
    if np.all(y == y[0]):
        raise EstimationError("degenerate response: all observations in one class")
    beta = np.zeros(x.shape[1])
    ll = _binary_loglik(x, y, beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(x @ beta)
        w = mu * (1 - mu)
        hess = (x * w[:, None]).T @ x
        grad = x.T @ (y - mu)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = _binary_loglik(x, y, cand)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-8:
                break
            t /= 2
        change = _rel_change(t * step, cand)
        beta, ll = cand, ll_new
        if change < tol:
            converged = True
            break
        if ll > -1e-8 * x.shape[0]:
            # probabilities sit on the responses: separated data
            break
    if not np.all(np.isfinite(beta)):
        converged = False
    return LogitModel(beta, converged, it, ll, tol, max_iter)


def _multinomial_loglik(x, y_onehot, coef):
    eta = np.column_stack([x @ coef.T, np.zeros(x.shape[0])])
    return float(np.sum(y_onehot * eta) - np.sum(logsumexp(eta, axis=1)))


def fit_multinomial_logit(
    features: np.ndarray, labels: np.ndarray, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL
) -> MultinomialLogitModel:
    """Baseline-category logit for labels in {1,2,3}, class 3 as reference."""
    x = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    _check_design(x, labels.shape[0])
    if not np.all(np.isin(labels, (1, 2, 3))):
        raise ValidationError("labels must lie in {1,2,3}")
    if np.all(labels == labels[0]):
        raise EstimationError("degenerate response: all observations in one class")
    n, m = x.shape
    y = np.eye(3)[labels - 1]
    coef = np.zeros((2, m))
    ll = _multinomial_loglik(x, y, coef)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        prob = _softmax_ref(x @ coef.T)
        grad = np.concatenate([x.T @ (y[:, c] - prob[:, c]) for c in range(2)])
        hess = np.empty((2 * m, 2 * m))
        for a in range(2):
            for b in range(2):
                w = prob[:, a] * ((a == b) - prob[:, b])
                hess[a * m:(a + 1) * m, b * m:(b + 1) * m] = (x * w[:, None]).T @ x
        try:
            step = np.linalg.solve(hess, grad).reshape(2, m)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while True:
            cand = coef + t * step
            ll_new = _multinomial_loglik(x, y, cand)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-8:
                break
            t /= 2
        change = _rel_change(t * step, cand)
        coef, ll = cand, ll_new
        if change < tol:
            converged = True
            break
        if ll > -1e-8 * n:
            break
    if not np.all(np.isfinite(coef)):
        converged = False
    return MultinomialLogitModel(coef, converged, it, ll, tol, max_iter)


# ------------------------------------------------------------------- nuisance


@dataclass(frozen=True, eq=False)
class NuisanceEstimates:
    rho_hat: np.ndarray
    pi_hat: np.ndarray
    disease_model: MultinomialLogitModel | None = None
    verification_model: LogitModel | None = None
    warnings: tuple[str, ...] = field(default_factory=tuple)


def estimate_nuisance(
    dataset: Dataset,
    disease_formula: Formula | str | None = None,
    verification_formula: Formula | str | None = None,
) -> NuisanceEstimates:
    """Fit both working models and predict for every unit.

    A constant verification vector (all verified) skips the logit fit and
    uses the observed rate.
    """
    dform = _as_formula(disease_formula, dataset.p)
    vform = _as_formula(verification_formula, dataset.p)
    notes = []
    ver = dataset.verified
    if not ver.any():
        raise EstimationError("no verified units: disease model cannot be fitted")
    xd = dform.design(dataset)
    dmodel = fit_multinomial_logit(xd[ver], dataset.d[ver])
    if not dmodel.converged:
        notes.append(f"disease model did not converge after {dmodel.iterations} iterations")
    rho = dmodel.predict(xd)
    vmodel = None
    if ver.all():
        pi = np.ones(dataset.n)
    else:
        vmodel = fit_binary_logit(vform.design(dataset), dataset.v)
        if not vmodel.converged:
            notes.append(f"verification model did not converge after {vmodel.iterations} iterations")
        pi = vmodel.predict(vform.design(dataset))
    for note in notes:
        warnings.warn(note, RuntimeWarning, stacklevel=2)
    return NuisanceEstimates(rho, pi, dmodel, vmodel, tuple(notes))


def _propensity(dataset: Dataset, nuisance: NuisanceEstimates, clamp: bool) -> np.ndarray:
    pi = np.asarray(nuisance.pi_hat, dtype=float)
    low = np.flatnonzero(dataset.verified & (pi < PROPENSITY_FLOOR))
    if low.size and not clamp:
        shown = ", ".join(str(i + 1) for i in low[:10])
        raise NumericalError(
            f"estimated verification probability below {PROPENSITY_FLOOR} for {low.size} "
            f"verified units (units {shown}); enable propensity clamping to proceed"
        )
    if np.any(pi <= 0) and not clamp:
        raise NumericalError("estimated verification probability is zero for some unit")
    return np.maximum(pi, PROPENSITY_FLOOR) if clamp else pi


def fi_weights(dataset: Dataset, nuisance: NuisanceEstimates) -> np.ndarray:
    return np.asarray(nuisance.rho_hat, dtype=float)


def msi_weights(dataset: Dataset, nuisance: NuisanceEstimates) -> np.ndarray:
    v = dataset.v[:, None]
    return v * dataset.onehot() + (1 - v) * nuisance.rho_hat


def ipw_weights(dataset: Dataset, nuisance: NuisanceEstimates, clamp: bool = False) -> np.ndarray:
    pi = _propensity(dataset, nuisance, clamp)[:, None]
    return dataset.v[:, None] * dataset.onehot() / pi


def spe_weights(dataset: Dataset, nuisance: NuisanceEstimates, clamp: bool = False) -> np.ndarray:
    pi = _propensity(dataset, nuisance, clamp)[:, None]
    v = dataset.v[:, None]
    return v * dataset.onehot() / pi - nuisance.rho_hat * (v - pi) / pi


def estimate_tcf_fi(dataset: Dataset, nuisance: NuisanceEstimates, cut: CutPair) -> TcfEstimate:
    return tcf_from_weights(dataset.t, fi_weights(dataset, nuisance), cut, EstimatorTag.FI)


def estimate_tcf_msi(dataset: Dataset, nuisance: NuisanceEstimates, cut: CutPair) -> TcfEstimate:
    return tcf_from_weights(dataset.t, msi_weights(dataset, nuisance), cut, EstimatorTag.MSI)


def estimate_tcf_ipw(dataset: Dataset, nuisance: NuisanceEstimates, cut: CutPair, clamp: bool = False) -> TcfEstimate:
    return tcf_from_weights(dataset.t, ipw_weights(dataset, nuisance, clamp), cut, EstimatorTag.IPW)


def estimate_tcf_spe(dataset: Dataset, nuisance: NuisanceEstimates, cut: CutPair, clamp: bool = False) -> TcfEstimate:
    """Doubly robust estimator; may leave [0, 1], which sets ``out_of_range``."""
    return tcf_from_weights(
        dataset.t, spe_weights(dataset, nuisance, clamp), cut, EstimatorTag.SPE, allow_out_of_range=True
    )
