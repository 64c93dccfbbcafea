"""TCF triple container and the weighted-count kernel shared by all estimators.

Every estimator in the package reduces to an ``n x 3`` weight matrix ``W``
whose column ``k`` stands in for the class-k indicator. The triple is then

    TCF1 = sum I(t <  c1)       W1 / sum W1
    TCF2 = sum I(c1 <= t < c2)  W2 / sum W2
    TCF3 = sum I(t >= c2)       W3 / sum W3
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import CutPair, Dataset
from .errors import EstimationError, ValidationError


class EstimatorTag(enum.Enum):
    COMPLETE = "complete"
    FI = "fi"
    MSI = "msi"
    IPW = "ipw"
    SPE = "spe"
    KNN = "knn"


@dataclass(frozen=True, eq=False)
class TcfEstimate:
    tcf: np.ndarray
    cut: CutPair
    estimator: EstimatorTag
    k: int | None = None
    covariance: np.ndarray | None = None
    out_of_range: bool = False

    def __post_init__(self):
        tcf = np.array(self.tcf, dtype=float).reshape(3)
        tcf.setflags(write=False)
        object.__setattr__(self, "tcf", tcf)
        if self.covariance is not None:
            cov = np.array(self.covariance, dtype=float)
            if cov.shape != (3, 3):
                raise ValidationError(f"covariance must be 3x3, got {cov.shape}")
            scale = max(np.abs(cov).max(), np.finfo(float).tiny)
            if np.abs(cov - cov.T).max() > 1e-12 * scale:
                raise ValidationError("covariance must be symmetric")
            cov.setflags(write=False)
            object.__setattr__(self, "covariance", cov)

    @property
    def sd(self) -> np.ndarray | None:
        if self.covariance is None:
            return None
        return np.sqrt(np.diag(self.covariance))

    def with_covariance(self, covariance: np.ndarray) -> "TcfEstimate":
        return TcfEstimate(self.tcf, self.cut, self.estimator, self.k, covariance, self.out_of_range)


def band_indicators(t: np.ndarray, cut: CutPair) -> np.ndarray:
    """``n x 3`` indicators of the three decision regions."""
    below = t < cut.c1
    above = t >= cut.c2
    return np.column_stack([below, ~below & ~above, above])


def tcf_from_weights(
    t: np.ndarray,
    weights: np.ndarray,
    cut: CutPair,
    estimator: EstimatorTag,
    k: int | None = None,
    allow_out_of_range: bool = False,
) -> TcfEstimate:
    """Ratio-form TCF triple from a class weight matrix.

    Zero or negative class mass raises :class:`EstimationError`. Components
    outside [0, 1] are an error unless ``allow_out_of_range`` is set, in which
    case the estimate is flagged instead.
    """
    weights = np.asarray(weights, dtype=float)
    regions = band_indicators(np.asarray(t), cut)
    denom = weights.sum(axis=0)
    for cls, mass in enumerate(denom, start=1):
        if not mass > 0:
            raise EstimationError(f"class {cls} has non-positive estimated mass ({mass:.6g})")
    numer = (regions * weights).sum(axis=0)
    tcf = numer / denom
    outside = bool(np.any((tcf < 0) | (tcf > 1)))
    if outside and not allow_out_of_range:
        raise EstimationError(f"TCF estimate outside [0,1]: {tcf}")
    return TcfEstimate(tcf=tcf, cut=cut, estimator=estimator, k=k, out_of_range=outside)


def complete_data_tcf(dataset: Dataset, cut: CutPair) -> TcfEstimate:
    """Empirical TCFs when every unit carries its label."""
    if dataset.n_verified != dataset.n:
        raise ValidationError(
            f"complete-data estimator needs every unit verified ({dataset.n - dataset.n_verified} are not)"
        )
    return tcf_from_weights(dataset.t, dataset.onehot(), cut, EstimatorTag.COMPLETE)
