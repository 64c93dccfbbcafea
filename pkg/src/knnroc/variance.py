"""Plug-in asymptotic covariance of the KNN TCF triple.

Two assembly routes are provided and must agree:

* :func:`xi_scalar` evaluates each entry of the 3x3 covariance from its
  closed-form expression in the moment variances and the ``psi`` cross terms.
* :func:`xi_delta_method` builds the 6x6 covariance of
  ``(theta1, theta2, beta11, beta12, beta22, beta23)`` and conjugates it with
  the Jacobian of the moment-to-TCF map.

All second-moment terms share one pattern. For a unit-level indicator ``I``
and classes ``a, b``::

    (1 + 1/K) * mean[(1 - pi) I q] + mean[(1 - pi)^2 I q / pi]

with ``q = rho_a (1 - rho_a)`` for the variance terms and
``q = rho_a rho_b`` for the cross terms. Sums are taken with ``math.fsum``
so results do not depend on summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import CutPair, Dataset
from .errors import NumericalError, ValidationError
from .estimates import TcfEstimate
from .knn import MomentSet
from .neighbors import Metric, NeighborOrder, adaptive_propensity, impute_rho
from .normal import chi2_ppf

DEFAULT_K_BAR = 2
# relative slack for round-off when checking that a variance is nonnegative
_NEG_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PluginNuisance:
    rho_tilde: np.ndarray
    pi_tilde: np.ndarray
    k_bar: int


def plugin_rho_pi(
    dataset: Dataset,
    metric: Metric = Metric(),
    k_bar: int = DEFAULT_K_BAR,
    include_self: bool = True,
    order: NeighborOrder | None = None,
) -> PluginNuisance:
    """KNN plug-ins for the disease probabilities and verification propensity.

    A fully verified dataset takes the fast path ``pi = 1``.
    """
    if k_bar < 2:
        raise ValidationError(f"k_bar must be at least 2, got {k_bar}")
    if order is None:
        order = NeighborOrder(dataset, metric)
    rho = impute_rho(dataset, k_bar, metric, order=order).values
    if dataset.n_verified == dataset.n:
        pi = np.ones(dataset.n)
    else:
        pi = adaptive_propensity(dataset, metric, include_self=include_self, order=order).values
    return PluginNuisance(rho_tilde=rho, pi_tilde=pi, k_bar=k_bar)


@dataclass(frozen=True, eq=False)
class OmegaSet:
    """Imputation-variance terms at one cut pair.

    ``omega_jk[j, k]`` restricts to ``t >= c_{j+1}``, ``eta_jk[j, k]`` to
    ``t < c_{j+1}``. ``psi_*`` names list the indicator then the class pair:
    1212 is the middle band with classes 1,2; 112 is ``t >= c1`` with 1,2;
    213 is ``t >= c2`` with 1,3; 12 is unrestricted with 1,2; 113 is
    ``t >= c1`` with 1,3; 223 is ``t >= c2`` with 2,3; 1223 is the middle
    band with 2,3.
    """

    omega_k: np.ndarray
    omega_jk: np.ndarray
    eta_jk: np.ndarray
    psi_1212: float
    psi_112: float
    psi_213: float
    psi_12: float
    psi_113: float
    psi_223: float
    psi_1223: float
    lambda_sq: float | None
    k_imputation: int
    k_bar: int | None = None

    def all_terms(self) -> np.ndarray:
        return np.concatenate([
            self.omega_k, self.omega_jk.ravel(), self.eta_jk.ravel(),
            [self.psi_1212, self.psi_112, self.psi_213, self.psi_12,
             self.psi_113, self.psi_223, self.psi_1223],
        ])


def imputation_term(
    indicator: np.ndarray, q: np.ndarray, pi: np.ndarray, k_imputation: int
) -> float:
    """``(1+1/K) mean[(1-pi) I q] + mean[(1-pi)^2 I q / pi]``."""
    n = q.shape[0]
    one_minus = 1.0 - pi
    first = one_minus * q * indicator
    second = one_minus * one_minus * q / pi * indicator
    return (1.0 + 1.0 / k_imputation) * math.fsum(first) / n + math.fsum(second) / n


def lambda_squared(moments: MomentSet, omega_jk: np.ndarray) -> float:
    """Variance of the middle-band class-2 moment ``beta12 - beta22``."""
    delta = moments.delta
    value = delta * (1.0 - delta) + omega_jk[0, 1] - omega_jk[1, 1]
    if value < 0:
        raise NumericalError(f"negative plug-in variance lambda^2 = {value:.6g}")
    return value


def omega_terms(
    dataset: Dataset,
    rho_tilde: np.ndarray,
    pi_tilde: np.ndarray,
    k_imputation: int,
    cut: CutPair,
    moments: MomentSet | None = None,
    k_bar: int | None = None,
) -> OmegaSet:
    """Empirical-mean plug-ins of every omega, eta and psi term.

    ``lambda_sq`` is filled only when ``moments`` is supplied.
    """
    rho = np.asarray(rho_tilde, dtype=float)
    pi = np.asarray(pi_tilde, dtype=float)
    n = dataset.n
    if rho.shape != (n, 3) or pi.shape != (n,):
        raise ValidationError("rho_tilde must be n x 3 and pi_tilde length n")
    if np.any(pi <= 0):
        raise NumericalError("plug-in propensity has zero entries")
    if k_imputation < 1:
        raise ValidationError(f"k_imputation must be positive, got {k_imputation}")
    t = dataset.t
    ones = np.ones(n)
    above = [(t >= cut.c1).astype(float), (t >= cut.c2).astype(float)]
    below = [1.0 - above[0], 1.0 - above[1]]
    band = above[0] - above[1]
    var_q = [rho[:, k] * (1.0 - rho[:, k]) for k in range(3)]

    def term(ind, q):
        return imputation_term(ind, q, pi, k_imputation)

    omega_k = np.array([term(ones, var_q[k]) for k in range(3)])
    omega_jk = np.array([[term(above[j], var_q[k]) for k in range(3)] for j in range(2)])
    eta_jk = np.array([[term(below[j], var_q[k]) for k in range(3)] for j in range(2)])
    r12 = rho[:, 0] * rho[:, 1]
    r13 = rho[:, 0] * rho[:, 2]
    r23 = rho[:, 1] * rho[:, 2]
    lam = lambda_squared(moments, omega_jk) if moments is not None else None
    return OmegaSet(
        omega_k=omega_k,
        omega_jk=omega_jk,
        eta_jk=eta_jk,
        psi_1212=term(band, r12),
        psi_112=term(above[0], r12),
        psi_213=term(above[1], r13),
        psi_12=term(ones, r12),
        psi_113=term(above[0], r13),
        psi_223=term(above[1], r23),
        psi_1223=term(band, r23),
        lambda_sq=lam,
        k_imputation=k_imputation,
        k_bar=k_bar,
    )


# -------------------------------------------------------------- scalar route


def _check_theta(m: MomentSet) -> tuple[float, float, float]:
    th1, th2 = float(m.theta[0]), float(m.theta[1])
    th3 = 1.0 - th1 - th2
    for k, th in enumerate((th1, th2, th3), start=1):
        if not th > 0:
            raise NumericalError(f"class {k} has zero estimated prevalence")
    return th1, th2, th3


def _check_variance(xi: np.ndarray) -> np.ndarray:
    diag = np.diag(xi)
    scale = max(1.0, float(np.abs(xi).max()))
    if np.any(diag < -_NEG_TOL * scale):
        raise NumericalError(
            f"negative plug-in variance on the diagonal {diag}; consider bootstrap variance"
        )
    # round-off below zero only
    np.fill_diagonal(xi, np.maximum(diag, 0.0))
    return xi


def _symmetric(entries: dict[tuple[int, int], float], size: int) -> np.ndarray:
    out = np.zeros((size, size))
    for (i, j), value in entries.items():
        out[i, j] = out[j, i] = value
    return out


def xi_scalar(moments: MomentSet, omegas: OmegaSet) -> np.ndarray:
    """3x3 asymptotic covariance from the closed-form entry expressions."""
    th1, th2, th3 = _check_theta(moments)
    b, g = moments.beta, moments.gamma
    b11, b12, b22, b23 = b[0, 0], b[0, 1], b[1, 1], b[1, 2]
    dlt = b12 - b22
    om, omj, eta = omegas.omega_k, omegas.omega_jk, omegas.eta_jk

    s1 = th1 * (1 - th1) + om[0]
    s2 = th2 * (1 - th2) + om[1]
    s12_star = -(th1 * th2 + omegas.psi_12)
    s3 = s1 + 2 * s12_star + s2

    def sig_jk(j, k):
        return b[j, k] * (1 - b[j, k]) + omj[j, k]

    def zeta_jk(j, k):
        return g[j, k] * (1 - g[j, k]) + eta[j, k]

    s111 = 0.5 * (s1 + sig_jk(0, 0) - zeta_jk(0, 0))
    s212 = 0.5 * (s2 + sig_jk(0, 1) - zeta_jk(0, 1))
    s222 = 0.5 * (s2 + sig_jk(1, 1) - zeta_jk(1, 1))
    s323 = 0.5 * (s3 + sig_jk(1, 2) - zeta_jk(1, 2))
    lam = omegas.lambda_sq if omegas.lambda_sq is not None else lambda_squared(moments, omj)

    # pinned cross covariances
    cov_b11_band = -(omegas.psi_1212 + b11 * dlt)
    cov_th1_band = -(omegas.psi_1212 + th1 * dlt)
    s211 = -(omegas.psi_112 + th2 * b11)
    s123 = -(omegas.psi_213 + th1 * b23)
    s1123 = -(omegas.psi_213 + b11 * b23)
    cov_th12_b11 = omegas.psi_113 + th3 * b11
    cov_band_b23 = -b23 * dlt
    s223 = -(omegas.psi_223 + th2 * b23)
    cov_th12_band = omegas.psi_1223 + th3 * dlt

    xi1 = b11**2 / th1**4 * s1 + sig_jk(0, 0) / th1**2 - 2 * b11 / th1**3 * s111
    xi2 = dlt**2 / th2**4 * s2 + lam / th2**2 - 2 * dlt / th2**3 * (s212 - s222)
    xi3 = b23**2 * s3 / th3**4 + sig_jk(1, 2) / th3**2 - 2 * b23 * s323 / th3**3
    xi12 = (
        -cov_b11_band / (th1 * th2)
        + b11 / (th1**2 * th2) * cov_th1_band
        - dlt / th2**2 * (b11 / th1**2 * s12_star - s211 / th1)
    )
    xi13 = (
        (b11 / th1**2 * s123 - s1123 / th1) / th3
        + b23 / (th1 * th3**2) * (b11 / th1 * (s1 + s12_star) - cov_th12_b11)
    )
    xi23 = (
        (cov_band_b23 - dlt / th2 * s223) / (th2 * th3)
        + b23 / (th2 * th3**2) * (cov_th12_band - dlt / th2 * (s2 + s12_star))
    )
    xi = _symmetric({(0, 0): xi1, (1, 1): xi2, (2, 2): xi3, (0, 1): xi12, (0, 2): xi13, (1, 2): xi23}, 3)
    return _check_variance(xi)


# --------------------------------------------------------------- matrix route

MOMENT_ORDER = ("theta1", "theta2", "beta11", "beta12", "beta22", "beta23")


def sigma_star(moments: MomentSet, omegas: OmegaSet) -> np.ndarray:
    """6x6 covariance of ``(theta1, theta2, beta11, beta12, beta22, beta23)``."""
    th1, th2 = float(moments.theta[0]), float(moments.theta[1])
    b = moments.beta
    b11, b12, b22, b23 = b[0, 0], b[0, 1], b[1, 1], b[1, 2]
    om, omj = omegas.omega_k, omegas.omega_jk
    # class 1,2 cross term restricted to t >= c2
    psi_hi_12 = omegas.psi_112 - omegas.psi_1212
    e = {
        (0, 0): th1 * (1 - th1) + om[0],
        (1, 1): th2 * (1 - th2) + om[1],
        (2, 2): b11 * (1 - b11) + omj[0, 0],
        (3, 3): b12 * (1 - b12) + omj[0, 1],
        (4, 4): b22 * (1 - b22) + omj[1, 1],
        (5, 5): b23 * (1 - b23) + omj[1, 2],
        (0, 1): -(th1 * th2 + omegas.psi_12),
        (0, 2): b11 * (1 - th1) + omj[0, 0],
        (0, 3): -(th1 * b12 + omegas.psi_112),
        (0, 4): -(th1 * b22 + psi_hi_12),
        (0, 5): -(th1 * b23 + omegas.psi_213),
        (1, 2): -(th2 * b11 + omegas.psi_112),
        (1, 3): b12 * (1 - th2) + omj[0, 1],
        (1, 4): b22 * (1 - th2) + omj[1, 1],
        (1, 5): -(th2 * b23 + omegas.psi_223),
        (2, 3): -(b11 * b12 + omegas.psi_112),
        (2, 4): -(b11 * b22 + psi_hi_12),
        (2, 5): -(b11 * b23 + omegas.psi_213),
        (3, 4): b22 * (1 - b12) + omj[1, 1],
        (3, 5): -(b12 * b23 + omegas.psi_223),
        (4, 5): -(b22 * b23 + omegas.psi_223),
    }
    return _symmetric(e, 6)


def sigma_star_general(
    dataset: Dataset,
    weights: np.ndarray,
    rho_tilde: np.ndarray,
    pi_tilde: np.ndarray,
    k_imputation: int,
    cut: CutPair,
) -> np.ndarray:
    """6x6 covariance built entry by entry from the generic pattern.

    For moments ``m_a = mean[I_a W_{k_a}]`` the entry is
    ``mean[I_a I_b W_k] delta_kl - mu_a mu_b`` plus the imputation term with
    ``q = rho_k (delta_kl - rho_l)``. Used to cross-check :func:`sigma_star`.
    """
    t = dataset.t
    n = dataset.n
    ones = np.ones(n)
    hi1 = (t >= cut.c1).astype(float)
    hi2 = (t >= cut.c2).astype(float)
    spec = [(ones, 0), (ones, 1), (hi1, 0), (hi1, 1), (hi2, 1), (hi2, 2)]
    mu = [math.fsum(ind * weights[:, k]) / n for ind, k in spec]
    out = np.empty((6, 6))
    for a, (ia, ka) in enumerate(spec):
        for b_, (ib, kb) in enumerate(spec):
            ind = ia * ib
            same = float(ka == kb)
            base = same * math.fsum(ind * weights[:, ka]) / n - mu[a] * mu[b_]
            q = rho_tilde[:, ka] * (same - rho_tilde[:, kb])
            out[a, b_] = base + imputation_term(ind, q, pi_tilde, k_imputation)
    return out


def jacobian(moments: MomentSet) -> np.ndarray:
    """Derivative of the TCF triple with respect to the six moments."""
    th1, th2, th3 = _check_theta(moments)
    b = moments.beta
    b11, b23 = b[0, 0], b[1, 2]
    dlt = moments.delta
    return np.array([
        [b11 / th1**2, 0.0, -1.0 / th1, 0.0, 0.0, 0.0],
        [0.0, -dlt / th2**2, 0.0, 1.0 / th2, -1.0 / th2, 0.0],
        [b23 / th3**2, b23 / th3**2, 0.0, 0.0, 0.0, 1.0 / th3],
    ])


def xi_delta_method(moments: MomentSet, sigma: np.ndarray) -> np.ndarray:
    th1, th2 = float(moments.theta[0]), float(moments.theta[1])
    if th1 + th2 >= 1:
        raise NumericalError("theta1 + theta2 must be below 1")
    h = jacobian(moments)
    xi = h @ sigma @ h.T
    return _check_variance(0.5 * (xi + xi.T))


# ------------------------------------------------------------------- helpers


def knn_asymptotic_covariance(
    dataset: Dataset,
    moments: MomentSet,
    k_imputation: int,
    plugin: PluginNuisance,
    route: str = "scalar",
) -> np.ndarray:
    """Finite-sample covariance ``Xi / n`` of the KNN TCF triple."""
    omegas = omega_terms(
        dataset, plugin.rho_tilde, plugin.pi_tilde, k_imputation, moments.cut, moments, plugin.k_bar
    )
    if route == "scalar":
        xi = xi_scalar(moments, omegas)
    elif route == "matrix":
        xi = xi_delta_method(moments, sigma_star(moments, omegas))
    else:
        raise ValidationError(f"unknown variance route {route!r}")
    return xi / dataset.n


@dataclass(frozen=True, eq=False)
class EllipsoidSpec:
    """Region ``{x : (x - center)^T C^{-1} (x - center) <= radius2}``."""

    center: np.ndarray
    covariance: np.ndarray
    cholesky: np.ndarray
    radius2: float
    level: float

    def distance2(self, x) -> float:
        z = np.linalg.solve(self.cholesky, np.asarray(x, dtype=float) - self.center)
        return float(z @ z)

    def contains(self, x) -> bool:
        return self.distance2(x) <= self.radius2

    def semi_axes(self) -> np.ndarray:
        return np.sqrt(self.radius2 * np.linalg.eigvalsh(self.covariance))


def confidence_ellipsoid(estimate: TcfEstimate, level: float = 0.95) -> EllipsoidSpec:
    if estimate.covariance is None:
        raise ValidationError("estimate carries no covariance")
    cov = np.asarray(estimate.covariance, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericalError("covariance is singular or not positive definite") from None
    return EllipsoidSpec(
        center=np.array(estimate.tcf), covariance=cov, cholesky=chol,
        radius2=chi2_ppf(level, 3), level=level,
    )
