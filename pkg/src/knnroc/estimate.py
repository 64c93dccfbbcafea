"""One entry point for every estimator, shared by the CLI, bootstrap and simulations.

Estimation is split into a per-dataset step that builds the class weight
matrix (neighbour search or working-model fits) and a cheap per-cut step, so
cut grids and Monte Carlo tables reuse the expensive part.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import CutPair, Dataset
from .errors import ValidationError
from .estimates import EstimatorTag, TcfEstimate, complete_data_tcf, tcf_from_weights
from .knn import knn_weights, moments_from_weights
from .neighbors import Metric, NeighborOrder
from .parametric import (
    Formula,
    NuisanceEstimates,
    estimate_nuisance,
    fi_weights,
    ipw_weights,
    msi_weights,
    spe_weights,
)
from .variance import DEFAULT_K_BAR, PluginNuisance, knn_asymptotic_covariance, plugin_rho_pi


@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator to run and its tuning.

    ``k`` is the neighbourhood size for KNN; the formulas apply to the
    parametric estimators and default to all of ``t, a1..ap``.
    """

    tag: EstimatorTag
    k: int | None = None
    metric: Metric = Metric()
    disease_formula: str | None = None
    verification_formula: str | None = None
    clamp_propensity: bool = False
    k_bar: int = DEFAULT_K_BAR

    def __post_init__(self):
        object.__setattr__(self, "tag", EstimatorTag(self.tag))
        if self.tag is EstimatorTag.KNN:
            if self.k is None or self.k < 1:
                raise ValidationError("KNN estimator needs a positive k")
        for f in (self.disease_formula, self.verification_formula):
            if f is not None:
                Formula.parse(f)

    @property
    def label(self) -> str:
        if self.tag is EstimatorTag.KNN:
            return f"{self.k}NN"
        return self.tag.name

    def with_k(self, k: int) -> "EstimatorSpec":
        return replace(self, k=k)


@dataclass(frozen=True, eq=False)
class PreparedEstimator:
    """Weight matrix of one estimator on one dataset, ready for any cut."""

    spec: EstimatorSpec
    dataset: Dataset
    weights: np.ndarray
    nuisance: NuisanceEstimates | None = None

    def tcf(self, cut: CutPair) -> TcfEstimate:
        tag = self.spec.tag
        return tcf_from_weights(
            self.dataset.t, self.weights, cut, tag,
            k=self.spec.k if tag is EstimatorTag.KNN else None,
            allow_out_of_range=tag is EstimatorTag.SPE,
        )

    def moments(self, cut: CutPair):
        return moments_from_weights(self.dataset.t, self.weights, cut, self.spec.k)


def prepare(
    dataset: Dataset,
    spec: EstimatorSpec,
    order: NeighborOrder | None = None,
    nuisance: NuisanceEstimates | None = None,
) -> PreparedEstimator:
    tag = spec.tag
    if tag is EstimatorTag.COMPLETE:
        if dataset.n_verified != dataset.n:
            raise ValidationError(
                f"complete-data estimator needs every unit verified ({dataset.n - dataset.n_verified} are not)"
            )
        return PreparedEstimator(spec, dataset, dataset.onehot())
    if tag is EstimatorTag.KNN:
        return PreparedEstimator(spec, dataset, knn_weights(dataset, spec.k, spec.metric, order))
    if nuisance is None:
        nuisance = estimate_nuisance(dataset, spec.disease_formula, spec.verification_formula)
    if tag is EstimatorTag.FI:
        w = fi_weights(dataset, nuisance)
    elif tag is EstimatorTag.MSI:
        w = msi_weights(dataset, nuisance)
    elif tag is EstimatorTag.IPW:
        w = ipw_weights(dataset, nuisance, spec.clamp_propensity)
    else:
        w = spe_weights(dataset, nuisance, spec.clamp_propensity)
    return PreparedEstimator(spec, dataset, w, nuisance)


def estimate_tcf(dataset: Dataset, spec: EstimatorSpec, cut: CutPair) -> TcfEstimate:
    if spec.tag is EstimatorTag.COMPLETE:
        return complete_data_tcf(dataset, cut)
    return prepare(dataset, spec).tcf(cut)


def asymptotic_covariance(
    prepared: PreparedEstimator,
    cut: CutPair,
    plugin: PluginNuisance | None = None,
    order: NeighborOrder | None = None,
) -> np.ndarray:
    """Plug-in ``Xi / n`` for KNN; complete data uses the same formulas with no imputation."""
    spec = prepared.spec
    if spec.tag not in (EstimatorTag.KNN, EstimatorTag.COMPLETE):
        raise ValidationError(
            f"no asymptotic variance for {spec.tag.value}; use bootstrap variance instead"
        )
    dataset = prepared.dataset
    k = spec.k if spec.tag is EstimatorTag.KNN else 1
    if plugin is None:
        if spec.tag is EstimatorTag.COMPLETE:
            n = dataset.n
            plugin = PluginNuisance(np.zeros((n, 3)), np.ones(n), spec.k_bar)
        else:
            plugin = plugin_rho_pi(dataset, spec.metric, spec.k_bar, order=order)
    return knn_asymptotic_covariance(dataset, prepared.moments(cut), k, plugin)
