"""Distance metrics, exact nearest-neighbour search and KNN-based imputation.

All searches are brute force over the joint feature vector ``(t, a1..ap)``.
Distance ties are broken by ascending original unit index, which makes
every ordering deterministic. Mahalanobis distance is computed as the
Euclidean distance between whitened features, so the pairwise routine and
the scalar :func:`distance` agree bit for bit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .data import N_CLASSES, Dataset
from .errors import NumericalError, ValidationError

_CHUNK = 256


class MetricKind(enum.Enum):
    EUCLIDEAN = "euclidean"
    MANHATTAN = "manhattan"
    CANBERRA = "canberra"
    MAHALANOBIS = "mahalanobis"


class Pool(enum.Enum):
    VERIFIED = "verified"
    ALL = "all"


@dataclass(frozen=True, eq=False)
class Metric:
    """Distance specification.

    ``mahalanobis_covariance`` is only meaningful for MAHALANOBIS; when it is
    left as ``None`` the covariance is estimated from all units of the
    dataset being searched (see :meth:`resolve`).
    """

    kind: MetricKind = MetricKind.EUCLIDEAN
    mahalanobis_covariance: np.ndarray | None = None

    def __post_init__(self):
        kind = MetricKind(self.kind)
        object.__setattr__(self, "kind", kind)
        cov = self.mahalanobis_covariance
        if cov is None:
            return
        if kind is not MetricKind.MAHALANOBIS:
            raise ValidationError(f"{kind.value} metric takes no covariance matrix")
        cov = np.array(cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValidationError("Mahalanobis covariance must be square")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=0):
            raise ValidationError("Mahalanobis covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValidationError("Mahalanobis covariance is not positive definite") from None
        cov.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(self, "mahalanobis_covariance", cov)
        object.__setattr__(self, "_chol", chol)

    @classmethod
    def parse(cls, name: str) -> "Metric":
        try:
            return cls(MetricKind(name.lower()))
        except ValueError:
            choices = ", ".join(m.value for m in MetricKind)
            raise ValidationError(f"unknown metric {name!r}; choose from {choices}") from None

    def resolve(self, dataset: Dataset) -> "Metric":
        """Fill in the Mahalanobis covariance from ``dataset`` if needed."""
        if self.kind is not MetricKind.MAHALANOBIS or self.mahalanobis_covariance is not None:
            return self
        feats = dataset.features()
        if feats.shape[0] < 2:
            raise ValidationError("Mahalanobis covariance needs at least 2 units")
        return Metric(MetricKind.MAHALANOBIS, np.atleast_2d(np.cov(feats, rowvar=False)))

    def transform(self, features: np.ndarray) -> np.ndarray:
        """Map features into the space where the base distance is applied."""
        features = np.asarray(features, dtype=float)
        if self.kind is not MetricKind.MAHALANOBIS:
            return features
        if self.mahalanobis_covariance is None:
            raise ValidationError("Mahalanobis metric has no covariance; call resolve(dataset) first")
        chol = self._chol
        if features.shape[-1] != chol.shape[0]:
            raise ValidationError(
                f"feature dimension {features.shape[-1]} does not match covariance {chol.shape}"
            )
        # whitened z solves L z = x row-wise
        return np.linalg.solve(chol, features.reshape(-1, chol.shape[0]).T).T.reshape(features.shape)


def _pairwise_transformed(xq: np.ndarray, xp: np.ndarray, kind: MetricKind) -> np.ndarray:
    diff = xq[:, None, :] - xp[None, :, :]
    if kind is MetricKind.MANHATTAN:
        return np.abs(diff).sum(axis=-1)
    if kind is MetricKind.CANBERRA:
        num = np.abs(diff)
        den = np.abs(xq)[:, None, :] + np.abs(xp)[None, :, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            terms = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        return terms.sum(axis=-1)
    return np.sqrt((diff * diff).sum(axis=-1))


def pairwise_distances(xq: np.ndarray, xp: np.ndarray, metric: Metric) -> np.ndarray:
    """Distance matrix between the rows of ``xq`` and ``xp`` (raw features)."""
    xq = np.atleast_2d(np.asarray(xq, dtype=float))
    xp = np.atleast_2d(np.asarray(xp, dtype=float))
    if xq.shape[1] != xp.shape[1]:
        raise ValidationError(f"dimension mismatch: {xq.shape[1]} vs {xp.shape[1]}")
    zq, zp = metric.transform(xq), metric.transform(xp)
    out = np.empty((zq.shape[0], zp.shape[0]))
    for start in range(0, zq.shape[0], _CHUNK):
        stop = start + _CHUNK
        out[start:stop] = _pairwise_transformed(zq[start:stop], zp, metric.kind)
    return out


def distance(x, y, metric: Metric = Metric()) -> float:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    y = np.asarray(y, dtype=float).reshape(1, -1)
    return float(pairwise_distances(x, y, metric)[0, 0])


# ------------------------------------------------------------------- orderings


class NeighborOrder:
    """Full neighbour ordering of every unit among all other units.

    Row ``i`` of :attr:`order` lists the indices ``j != i`` sorted by distance
    to unit ``i``, ties by ascending index. Computing it once lets imputation,
    K selection and propensity estimation share a single O(n^2 log n) sort.
    """

    def __init__(self, dataset: Dataset, metric: Metric = Metric()):
        self.dataset = dataset
        self.metric = metric.resolve(dataset)
        n = dataset.n
        dist = pairwise_distances(dataset.features(), dataset.features(), self.metric)
        dist[np.arange(n), np.arange(n)] = np.inf
        order = np.argsort(dist, axis=1, kind="stable")[:, : n - 1]
        self.order = order.astype(np.intp, copy=False)

    def first_in_pool(self, k: int, pool_mask: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        """First ``k`` neighbours of each query row restricted to ``pool_mask``.

        Query units are never their own neighbour.
        """
        order = self.order if rows is None else self.order[rows]
        if order.shape[0] == 0:
            return np.empty((0, k), dtype=np.intp)
        in_pool = pool_mask[order]
        available = in_pool.sum(axis=1)
        if k < 1:
            raise ValidationError(f"k must be a positive integer, got {k}")
        if available.min() < k:
            raise ValidationError(
                f"k={k} exceeds the neighbour pool size ({int(available.min())}) for some unit"
            )
        take = in_pool & (np.cumsum(in_pool, axis=1) <= k)
        return order[take].reshape(order.shape[0], k)


def _as_order(dataset: Dataset, metric: Metric, order: NeighborOrder | None) -> NeighborOrder:
    if order is None:
        return NeighborOrder(dataset, metric)
    if order.dataset is not dataset:
        raise ValidationError("neighbour ordering was built for a different dataset")
    return order


def knn_indices(
    query: int,
    k: int,
    dataset: Dataset,
    metric: Metric = Metric(),
    pool: Pool | str = Pool.VERIFIED,
) -> np.ndarray:
    """Indices of the ``k`` nearest neighbours of unit ``query``.

    The query itself is never returned. Ties are broken by ascending index.
    """
    pool = Pool(pool)
    if not 0 <= query < dataset.n:
        raise ValidationError(f"query index {query} out of range for n={dataset.n}")
    if k < 1:
        raise ValidationError(f"k must be a positive integer, got {k}")
    metric = metric.resolve(dataset)
    mask = dataset.verified.copy() if pool is Pool.VERIFIED else np.ones(dataset.n, dtype=bool)
    mask[query] = False
    candidates = np.flatnonzero(mask)
    if k > candidates.size:
        raise ValidationError(f"k={k} exceeds pool size {candidates.size}")
    feats = dataset.features()
    dist = pairwise_distances(feats[query], feats[candidates], metric)[0]
    return candidates[np.argsort(dist, kind="stable")[:k]]


# ------------------------------------------------------------------ imputation


@dataclass(frozen=True, eq=False)
class RhoMatrix:
    """Per-unit class frequencies among the ``k`` nearest verified neighbours."""

    values: np.ndarray
    k: int
    counts: np.ndarray


def impute_rho(
    dataset: Dataset,
    k: int,
    metric: Metric = Metric(),
    rows: np.ndarray | None = None,
    order: NeighborOrder | None = None,
) -> RhoMatrix:
    """Class-frequency vector of the ``k`` nearest verified neighbours.

    Verified queries are searched leave-one-out. With ``rows`` only those
    units are imputed and the other rows are left at zero.
    """
    if k < 1:
        raise ValidationError(f"k must be a positive integer, got {k}")
    n_ver = dataset.n_verified
    if n_ver < k:
        raise ValidationError(f"k={k} needs at least {k} verified units, found {n_ver}")
    order = _as_order(dataset, metric, order)
    rows = np.arange(dataset.n) if rows is None else np.asarray(rows, dtype=np.intp)
    nb = order.first_in_pool(k, dataset.verified, rows)
    labels = dataset.d[nb] - 1
    counts = np.zeros((dataset.n, N_CLASSES), dtype=np.int64)
    for c in range(N_CLASSES):
        counts[rows, c] = (labels == c).sum(axis=1)
    values = counts / k
    values.setflags(write=False)
    return RhoMatrix(values=values, k=k, counts=counts)


@dataclass(frozen=True)
class KSelection:
    k_star: int
    criterion: tuple[float, ...]


def select_k_curve(
    dataset: Dataset,
    metric: Metric = Metric(),
    k_max: int = 10,
    order: NeighborOrder | None = None,
) -> KSelection:
    """Leave-one-out L_{1,1} imputation error for ``K = 1..k_max``.

    The criterion at K is ``sum |D - rho_K|`` over verified units and the
    first two class columns, divided by ``2 * n_verified``. It is compared
    exactly in rational arithmetic so ties resolve to the smallest K.
    """
    n_ver = dataset.n_verified
    if n_ver < 2:
        raise ValidationError(f"K selection needs at least 2 verified units, found {n_ver}")
    if not 1 <= k_max <= n_ver - 1:
        raise ValidationError(f"k_max must lie in [1, {n_ver - 1}], got {k_max}")
    order = _as_order(dataset, metric, order)
    ver = np.flatnonzero(dataset.verified)
    nb = order.first_in_pool(k_max, dataset.verified, ver)
    labels = dataset.d[nb]
    own = dataset.d[ver]
    ks = np.arange(1, k_max + 1)
    total = np.zeros(k_max, dtype=np.int64)
    for c in (1, 2):
        cum = np.cumsum(labels == c, axis=1)
        target = (own == c)[:, None] * ks[None, :]
        # |K*D - count| is K times the L1 error of the frequency
        total += np.abs(target - cum).sum(axis=0)
    exact = [Fraction(int(s), int(k) * n_ver * 2) for s, k in zip(total, ks)]
    best = min(range(k_max), key=lambda i: (exact[i], i))
    return KSelection(k_star=best + 1, criterion=tuple(float(x) for x in exact))


def select_k(dataset: Dataset, metric: Metric = Metric(), k_max: int = 10, order: NeighborOrder | None = None) -> int:
    return select_k_curve(dataset, metric, k_max, order).k_star


# ------------------------------------------------------------------ propensity


@dataclass(frozen=True, eq=False)
class PropensityVector:
    values: np.ndarray
    k_star: np.ndarray


def adaptive_propensity(
    dataset: Dataset,
    metric: Metric = Metric(),
    include_self: bool = True,
    order: NeighborOrder | None = None,
) -> PropensityVector:
    """Verification propensity from an adaptive neighbourhood per unit.

    The neighbour list of unit ``i`` grows until it first contains a unit
    whose verification status differs from ``V_i``; ``K*_i`` is that length
    and the propensity is the fraction of verified units in the list.

    With ``include_self`` (default) the unit itself occupies rank 1, so an
    unverified unit whose nearest neighbour is verified gets ``K* = 2`` and
    1/2, and verified units never get 0. With ``include_self=False`` the list
    starts at the nearest other unit; a verified unit whose nearest
    neighbour is unverified then has propensity 0, which is an error.
    """
    n_ver = dataset.n_verified
    if n_ver == 0 or n_ver == dataset.n:
        raise ValidationError(
            "adaptive propensity needs both verified and unverified units; "
            "use the all-verified fast path (propensity 1) instead"
        )
    order = _as_order(dataset, metric, order)
    v = dataset.v.astype(np.int64)
    seq = v[order.order]
    if include_self:
        seq = np.column_stack([v, seq])
    target = 1 - v
    hit = seq == target[:, None]
    k_star = hit.argmax(axis=1) + 1
    verified_so_far = np.cumsum(seq, axis=1)[np.arange(dataset.n), k_star - 1]
    values = verified_so_far / k_star
    if np.any(values <= 0):
        bad = np.flatnonzero(values <= 0)
        raise NumericalError(
            f"zero propensity for {bad.size} units (first: unit {bad[0] + 1}); "
            "use the self-inclusive neighbour list"
        )
    return PropensityVector(values=values, k_star=k_star)
