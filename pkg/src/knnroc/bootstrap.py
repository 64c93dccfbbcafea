"""Nonparametric bootstrap covariance of a TCF triple."""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import CutPair, Dataset
from .errors import NumericalError, ValidationError
from .estimate import EstimatorSpec, estimate_tcf


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    covariance: np.ndarray
    replicates: np.ndarray
    b: int
    seed: int
    failures: int

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for replicate ``index`` derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _one_replicate(args) -> np.ndarray | None:
    dataset, spec, cut, seed, index = args
    rng = replicate_rng(seed, index)
    idx = rng.integers(0, dataset.n, size=dataset.n)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return estimate_tcf(dataset.take(idx), spec, cut).tcf.copy()
    except (NumericalError, ValidationError):
        return None


def bootstrap_covariance(
    dataset: Dataset,
    spec: EstimatorSpec,
    cut: CutPair,
    b: int = 500,
    seed: int = 0,
    workers: int = 1,
) -> BootstrapResult:
    """Resample units with replacement and re-estimate ``b`` times.

    Replicates whose estimator fails are discarded and counted; more than
    ``b/2`` failures is an error. Unsuccessful rows of ``replicates`` are NaN.
    """
    if b < 2:
        raise ValidationError(f"bootstrap needs b >= 2, got {b}")
    jobs = [(dataset, spec, cut, seed, i) for i in range(b)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_replicate, jobs, chunksize=max(1, b // (4 * workers))))
    else:
        results = [_one_replicate(job) for job in jobs]
    reps = np.full((b, 3), np.nan)
    for i, r in enumerate(results):
        if r is not None:
            reps[i] = r
    ok = ~np.isnan(reps).any(axis=1)
    failures = int(b - ok.sum())
    if failures > b / 2:
        raise NumericalError(f"{failures} of {b} bootstrap replicates failed")
    good = reps[ok]
    if good.shape[0] < 2:
        raise NumericalError("fewer than 2 successful bootstrap replicates")
    centred = good - good.mean(axis=0)
    cov = centred.T @ centred / (good.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    return BootstrapResult(covariance=cov, replicates=reps, b=b, seed=seed, failures=failures)
