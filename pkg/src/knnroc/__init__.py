"""Three-class ROC surface estimation with verification-bias correction.

The nearest-neighbour imputation estimator, four parametric comparators,
plug-in and bootstrap covariance, and simulation tooling.
"""

__version__ = "0.1.0"

from .data import CutPair, Dataset, SelectionRule, Unit, load_dataset, serialize, subsample_verification, validate
from .errors import EstimationError, NumericalError, ValidationError
from .estimate import EstimatorSpec, estimate_tcf, prepare
from .estimates import EstimatorTag, TcfEstimate, complete_data_tcf
from .knn import MomentSet, estimate_moments, estimate_tcf_knn
from .neighbors import Metric, MetricKind, adaptive_propensity, distance, impute_rho, knn_indices, select_k
from .variance import confidence_ellipsoid, omega_terms, plugin_rho_pi, sigma_star, xi_delta_method, xi_scalar

__all__ = [
    "CutPair", "Dataset", "SelectionRule", "Unit", "load_dataset", "serialize", "subsample_verification",
    "validate", "EstimationError", "NumericalError", "ValidationError", "EstimatorSpec", "estimate_tcf",
    "prepare", "EstimatorTag", "TcfEstimate", "complete_data_tcf", "MomentSet", "estimate_moments",
    "estimate_tcf_knn", "Metric", "MetricKind", "adaptive_propensity", "distance", "impute_rho",
    "knn_indices", "select_k", "confidence_ellipsoid", "omega_terms", "plugin_rho_pi", "sigma_star",
    "xi_delta_method", "xi_scalar",
]
