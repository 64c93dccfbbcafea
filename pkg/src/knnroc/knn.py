"""Nearest-neighbour imputation estimators of the class moments and TCFs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CutPair, Dataset
from .estimates import EstimatorTag, TcfEstimate, tcf_from_weights
from .neighbors import Metric, NeighborOrder, impute_rho


@dataclass(frozen=True, eq=False)
class MomentSet:
    """Class prevalences and cut-restricted joint probabilities.

    ``beta[j, k]`` estimates Pr(T >= c_{j+1}, D = k+1) and ``gamma[j, k]``
    estimates Pr(T < c_{j+1}, D = k+1).
    """

    theta: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    cut: CutPair
    k: int | None = None

    @property
    def delta(self) -> float:
        """Pr(c1 <= T < c2, D = 2)."""
        return float(self.beta[0, 1] - self.beta[1, 1])


def knn_weights(
    dataset: Dataset, k: int, metric: Metric = Metric(), order: NeighborOrder | None = None
) -> np.ndarray:
    """``V D + (1 - V) rho_K``: observed labels, imputed frequencies elsewhere."""
    unverified = np.flatnonzero(~dataset.verified)
    rho = impute_rho(dataset, k, metric, rows=unverified, order=order).values
    v = dataset.v[:, None]
    return v * dataset.onehot() + (1 - v) * rho


def moments_from_weights(t: np.ndarray, weights: np.ndarray, cut: CutPair, k: int | None = None) -> MomentSet:
    n = weights.shape[0]
    above = np.stack([t >= cut.c1, t >= cut.c2])
    theta = weights.sum(axis=0) / n
    beta = (above[:, :, None] * weights[None]).sum(axis=1) / n
    gamma = (~above[:, :, None] * weights[None]).sum(axis=1) / n
    return MomentSet(theta=theta, beta=beta, gamma=gamma, cut=cut, k=k)


def estimate_moments(
    dataset: Dataset,
    k: int,
    metric: Metric = Metric(),
    cut: CutPair | None = None,
    order: NeighborOrder | None = None,
) -> MomentSet:
    if cut is None:
        raise TypeError("cut is required")
    return moments_from_weights(dataset.t, knn_weights(dataset, k, metric, order), cut, k)


def estimate_tcf_knn(
    dataset: Dataset,
    k: int,
    metric: Metric = Metric(),
    cut: CutPair | None = None,
    order: NeighborOrder | None = None,
) -> TcfEstimate:
    if cut is None:
        raise TypeError("cut is required")
    weights = knn_weights(dataset, k, metric, order)
    return tcf_from_weights(dataset.t, weights, cut, EstimatorTag.KNN, k=k)


def tcf_from_moments(m: MomentSet) -> np.ndarray:
    """Difference form ``(1 - b11/th1, (b12 - b22)/th2, b23/th3)``."""
    return np.array([
        1.0 - m.beta[0, 0] / m.theta[0],
        (m.beta[0, 1] - m.beta[1, 1]) / m.theta[1],
        m.beta[1, 2] / m.theta[2],
    ])
