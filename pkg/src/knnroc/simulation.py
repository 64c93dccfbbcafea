"""Simulation scenarios, their true TCF/VUS values, and a Monte Carlo harness.

Scenario I: bivariate normal ``(T, A)`` within each class, verification
logistic in ``(T, A)``. Every working model is correctly specified.

Scenario II: class from thresholds on a latent normal, ``T`` and ``A`` noisy
linear functions of it. The comparator working models are misspecified on
purpose.
"""

from __future__ import annotations

import configparser
import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import expit

from .data import CutPair, Dataset
from .errors import NumericalError, ValidationError
from .estimate import EstimatorSpec, PreparedEstimator, asymptotic_covariance, prepare
from .estimates import EstimatorTag
from .neighbors import Metric, NeighborOrder
from .normal import norm_cdf, norm_pdf, norm_ppf
from .parametric import estimate_nuisance
from .variance import DEFAULT_K_BAR, plugin_rho_pi

SIGMA_CHOICES = {
    1: ((1.75, 0.1), (0.1, 2.5)),
    2: ((2.5, 1.5), (1.5, 2.5)),
    3: ((5.5, 3.0), (3.0, 2.5)),
}
SCENARIO_I_CUTS = ((2, 4), (2, 5), (2, 7), (4, 5), (4, 7), (5, 7))
SCENARIO_II_CUTS = ((-1.0, -0.5), (-1.0, 0.7), (-1.0, 1.3), (-0.5, 0.7), (-0.5, 1.3), (0.7, 1.3))


@dataclass(frozen=True)
class ScenarioIConfig:
    """Class-conditional ``(T, A) ~ N2((2k, k), sigma)`` with logistic verification."""

    theta: tuple[float, float, float] = (0.4, 0.35, 0.25)
    sigma: tuple[tuple[float, float], tuple[float, float]] = SIGMA_CHOICES[1]
    delta: tuple[float, float, float] = (0.5, -0.3, 0.75)
    n: int = 250
    seed: int = 0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (3,) or np.any(theta <= 0) or abs(theta.sum() - 1) > 1e-12:
            raise ValidationError("theta must be three positive values summing to 1")
        try:
            np.linalg.cholesky(np.asarray(self.sigma, dtype=float))
        except np.linalg.LinAlgError:
            raise ValidationError("sigma must be positive definite") from None
        if self.n < 1:
            raise ValidationError("n must be positive")

    @classmethod
    def with_sigma_choice(cls, choice: int, **kw) -> "ScenarioIConfig":
        if choice not in SIGMA_CHOICES:
            raise ValidationError(f"sigma_choice must be one of {sorted(SIGMA_CHOICES)}")
        return cls(sigma=SIGMA_CHOICES[choice], **kw)

    @property
    def means(self) -> np.ndarray:
        return np.array([[2.0 * k, float(k)] for k in (1, 2, 3)])

    def default_formulas(self) -> tuple[str, str]:
        return "t,a1", "t,a1"


@dataclass(frozen=True)
class ScenarioIIConfig:
    """Latent ``Z = Z1 + Z2 ~ N(0, 1)`` sets the class; ``T = alpha Z + e1``, ``A = Z + e2``."""

    alpha: float = 0.5
    theta1: float = 0.4
    theta3: float = 0.25
    noise_var: float = 0.25
    verification: tuple[float, float, float] = (-1.5, -0.35, -1.5)
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        solve_thresholds(self.theta1, self.theta3)
        if self.noise_var <= 0:
            raise ValidationError("noise variance must be positive")
        if self.n < 1:
            raise ValidationError("n must be positive")

    @property
    def thresholds(self) -> tuple[float, float]:
        return solve_thresholds(self.theta1, self.theta3)

    def default_formulas(self) -> tuple[str, str]:
        # misspecified on purpose: no covariate for disease, A^(2/3) for verification
        return "t", "t,a1^2/3"


def solve_thresholds(theta1: float, theta3: float) -> tuple[float, float]:
    if not (0 < theta1 < 1 and 0 < theta3 < 1):
        raise ValidationError("class proportions must lie in (0, 1)")
    if theta1 + theta3 >= 1:
        raise ValidationError("theta1 + theta3 must be below 1")
    return norm_ppf(theta1), norm_ppf(1.0 - theta3)


# ------------------------------------------------------------------ generators


def _rng(config, rng) -> np.random.Generator:
    return np.random.default_rng(config.seed) if rng is None else rng


def generate_scenario_i(config: ScenarioIConfig, rng: np.random.Generator | None = None) -> Dataset:
    rng = _rng(config, rng)
    n = config.n
    cls = rng.choice(3, size=n, p=np.asarray(config.theta))
    chol = np.linalg.cholesky(np.asarray(config.sigma, dtype=float))
    x = config.means[cls] + rng.standard_normal((n, 2)) @ chol.T
    d0, d1, d2 = config.delta
    v = rng.random(n) < expit(d0 + d1 * x[:, 0] + d2 * x[:, 1])
    return Dataset(x[:, 0], x[:, 1:], v.astype(np.int8), np.where(v, cls + 1, 0))


def generate_scenario_ii(config: ScenarioIIConfig, rng: np.random.Generator | None = None) -> Dataset:
    rng = _rng(config, rng)
    n = config.n
    h1, h2 = config.thresholds
    z = rng.normal(0.0, math.sqrt(0.5), n) + rng.normal(0.0, math.sqrt(0.5), n)
    cls = np.where(z <= h1, 0, np.where(z <= h2, 1, 2))
    sd = math.sqrt(config.noise_var)
    t = config.alpha * z + rng.normal(0.0, sd, n)
    a = z + rng.normal(0.0, sd, n)
    g0, g1, g2 = config.verification
    v = rng.random(n) < expit(g0 + g1 * t + g2 * a)
    return Dataset(t, a[:, None], v.astype(np.int8), np.where(v, cls + 1, 0))


def generate(config, rng: np.random.Generator | None = None) -> Dataset:
    if isinstance(config, ScenarioIConfig):
        return generate_scenario_i(config, rng)
    if isinstance(config, ScenarioIIConfig):
        return generate_scenario_ii(config, rng)
    raise ValidationError(f"unknown scenario config {type(config).__name__}")


# ---------------------------------------------------------------------- truth


@dataclass(frozen=True)
class ScenarioTruth:
    tcf: tuple[float, float, float]
    cut: CutPair
    method: str


def _cut(cut) -> CutPair:
    return cut if isinstance(cut, CutPair) else CutPair(*cut)


def true_tcf_scenario_i(sigma, cut) -> ScenarioTruth:
    cut = _cut(cut)
    s = math.sqrt(float(np.asarray(sigma, dtype=float)[0, 0]))
    tcf1 = float(norm_cdf((cut.c1 - 2) / s))
    tcf2 = float(norm_cdf((cut.c2 - 4) / s) - norm_cdf((cut.c1 - 4) / s))
    tcf3 = float(1 - norm_cdf((cut.c2 - 6) / s))
    return ScenarioTruth((tcf1, tcf2, tcf3), cut, "closed_form_phi")


def true_tcf_scenario_ii(config: ScenarioIIConfig, cut, epsabs: float = 1e-10) -> ScenarioTruth:
    """Class-conditional probabilities integrated over the standardized latent variable."""
    cut = _cut(cut)
    h1, h2 = config.thresholds
    a, sd = config.alpha, math.sqrt(config.noise_var)

    def below(c):
        return lambda z: float(norm_cdf((c - a * z) / sd) * norm_pdf(z))

    def quad(f, lo, hi):
        return integrate.quad(f, lo, hi, epsabs=epsabs, epsrel=epsabs, limit=200)[0]

    p1, p2 = float(norm_cdf(h1)), float(norm_cdf(h2))
    tcf1 = quad(below(cut.c1), -np.inf, h1) / p1
    tcf2 = (quad(below(cut.c2), h1, h2) - quad(below(cut.c1), h1, h2)) / (p2 - p1)
    tcf3 = 1.0 - quad(below(cut.c2), h2, np.inf) / (1.0 - p2)
    return ScenarioTruth((tcf1, tcf2, tcf3), cut, "numeric_integration")


def true_tcf(config, cut) -> ScenarioTruth:
    if isinstance(config, ScenarioIConfig):
        return true_tcf_scenario_i(config.sigma, cut)
    return true_tcf_scenario_ii(config, cut)


def true_vus_scenario_i(sigma, epsabs: float = 1e-10) -> float:
    """Pr(T1 < T2 < T3) for independent class-conditional normal test values."""
    sig = np.asarray(sigma, dtype=float)
    s = math.sqrt(float(sig[0, 0])) if sig.ndim == 2 else float(sigma)
    if s <= 0:
        raise ValidationError("test standard deviation must be positive")

    def f(t):
        return float(norm_cdf((t - 2) / s) * (1 - norm_cdf((t - 6) / s)) * norm_pdf((t - 4) / s) / s)

    lo, hi = 4 - 40 * s, 4 + 40 * s
    return integrate.quad(f, lo, hi, epsabs=epsabs, epsrel=epsabs, limit=400, points=[2, 4, 6])[0]


def complete_data_vus(dataset: Dataset, tie_weights: bool = False) -> float:
    """Fraction of (class 1, class 2, class 3) triples in strict increasing order.

    With ``tie_weights`` a single tie counts 1/2 and a triple tie 1/6.
    """
    if dataset.n_verified != dataset.n:
        raise ValidationError("VUS needs a fully verified dataset")
    groups = [np.sort(dataset.t[dataset.d == k]) for k in (1, 2, 3)]
    sizes = [g.size for g in groups]
    if min(sizes) == 0:
        raise ValidationError("every class needs at least one unit")
    x, y, z = groups
    below = np.searchsorted(x, y, side="left")
    above = z.size - np.searchsorted(z, y, side="right")
    total = float(np.sum(below.astype(np.int64) * above))
    if tie_weights:
        eq_x = np.searchsorted(x, y, side="right") - below
        eq_z = np.searchsorted(z, y, side="right") - np.searchsorted(z, y, side="left")
        total += float(np.sum(0.5 * eq_x * above + 0.5 * below * eq_z + eq_x * eq_z / 6.0))
    return total / (sizes[0] * sizes[1] * sizes[2])


# ---------------------------------------------------------------- Monte Carlo


@dataclass(frozen=True)
class SummaryRow:
    estimator: str
    cut: CutPair
    mean: np.ndarray | None
    mc_sd: np.ndarray | None
    asy_sd: np.ndarray | None
    out_of_range: np.ndarray | None
    n_ok: int
    n_failed: int
    n_variance_failed: int = 0


@dataclass(frozen=True)
class SummaryTable:
    rows: tuple[SummaryRow, ...]
    truth: dict = field(default_factory=dict)
    reps: int = 0
    seed: int = 0

    def row(self, estimator: str, cut) -> SummaryRow:
        cut = _cut(cut)
        for r in self.rows:
            if r.estimator == estimator and (r.cut.c1, r.cut.c2) == (cut.c1, cut.c2):
                return r
        raise KeyError((estimator, cut))

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["c1", "c2", "estimator", "statistic", "tcf1", "tcf2", "tcf3", "n_ok", "n_failed"])

        def fmt(vec):
            return ["" if vec is None else f"{x:.4f}" for x in (vec if vec is not None else [None] * 3)]

        cuts = []
        for r in self.rows:
            if (r.cut.c1, r.cut.c2) not in cuts:
                cuts.append((r.cut.c1, r.cut.c2))
        for c1, c2 in cuts:
            truth = self.truth.get((c1, c2))
            if truth is not None:
                w.writerow([c1, c2, "True", "true", *fmt(truth), "", ""])
            for r in self.rows:
                if (r.cut.c1, r.cut.c2) != (c1, c2):
                    continue
                stats = [("mean", r.mean), ("mc_sd", r.mc_sd)]
                if r.asy_sd is not None:
                    stats.append(("asy_sd", r.asy_sd))
                if r.out_of_range is not None:
                    stats.append(("out_of_range", r.out_of_range))
                for name, vec in stats:
                    w.writerow([c1, c2, r.estimator, name, *fmt(vec), r.n_ok, r.n_failed])
        return out.getvalue()


def _replicate(args):
    scenario, specs, cuts, seed, index, with_asy = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    data = generate(scenario, rng)
    orders: dict[int, NeighborOrder] = {}
    nuisances: dict = {}
    plugins: dict = {}
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for spec in specs:
            cells = []
            try:
                if spec.tag is EstimatorTag.KNN:
                    key = id(spec.metric)
                    if key not in orders:
                        orders[key] = NeighborOrder(data, spec.metric)
                    prepared = prepare(data, spec, order=orders[key])
                else:
                    fkey = (spec.disease_formula, spec.verification_formula)
                    if fkey not in nuisances:
                        nuisances[fkey] = estimate_nuisance(data, *fkey)
                    prepared = prepare(data, spec, nuisance=nuisances[fkey])
            except (NumericalError, ValidationError):
                out[spec.label] = [None] * len(cuts)
                continue
            for cut in cuts:
                cells.append(_cell(prepared, spec, cut, data, orders, plugins, with_asy))
            out[spec.label] = cells
    return out


def _cell(prepared: PreparedEstimator, spec, cut, data, orders, plugins, with_asy):
    try:
        est = prepared.tcf(cut)
    except (NumericalError, ValidationError):
        return None
    sd = None
    if with_asy and spec.tag is EstimatorTag.KNN:
        try:
            key = (id(spec.metric), spec.k_bar)
            if key not in plugins:
                plugins[key] = plugin_rho_pi(data, spec.metric, spec.k_bar, order=orders[id(spec.metric)])
            cov = asymptotic_covariance(prepared, cut, plugins[key])
            sd = np.sqrt(np.diag(cov))
        except (NumericalError, ValidationError):
            sd = "failed"
    return est.tcf.copy(), sd, est.out_of_range


def run_monte_carlo(
    scenario,
    estimators,
    cuts,
    reps: int = 500,
    seed: int = 0,
    workers: int = 1,
    asymptotic_sd: bool = True,
) -> SummaryTable:
    """Replicate ``scenario`` ``reps`` times and summarise each estimator at each cut.

    Replicate ``i`` draws from its own stream derived from ``(seed, i)``, so
    results do not depend on execution order or worker count.
    """
    if reps < 1:
        raise ValidationError("reps must be positive")
    cuts = [_cut(c) for c in cuts]
    specs = list(estimators)
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ValidationError(f"duplicate estimator labels {labels}")
    jobs = [(scenario, specs, cuts, seed, i, asymptotic_sd) for i in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, jobs, chunksize=max(1, reps // (8 * workers))))
    else:
        results = [_replicate(j) for j in jobs]

    rows = []
    for spec in specs:
        for ci, cut in enumerate(cuts):
            cells = [r[spec.label][ci] for r in results]
            ok = [c for c in cells if c is not None]
            n_failed = len(cells) - len(ok)
            if not ok:
                rows.append(SummaryRow(spec.label, cut, None, None, None, None, 0, n_failed))
                continue
            est = np.array([c[0] for c in ok])
            mean = est.mean(axis=0)
            mc_sd = est.std(axis=0, ddof=1) if len(ok) > 1 else None
            asy = None
            n_var_failed = 0
            if spec.tag is EstimatorTag.KNN and asymptotic_sd:
                sds = [c[1] for c in ok if not isinstance(c[1], str)]
                n_var_failed = len(ok) - len(sds)
                asy = np.mean(sds, axis=0) if sds else None
            oor = None
            if spec.tag is EstimatorTag.SPE:
                oor = ((est < 0) | (est > 1)).mean(axis=0)
            rows.append(SummaryRow(spec.label, cut, mean, mc_sd, asy, oor, len(ok), n_failed, n_var_failed))
    truth = {(c.c1, c.c2): true_tcf(scenario, c).tcf for c in cuts}
    return SummaryTable(tuple(rows), truth, reps, seed)


# ---------------------------------------------------------------- config file

CONFIG_KEYS = ("scenario", "n", "reps", "seed", "sigma_choice", "alpha", "cuts", "estimators", "k", "metric", "k_bar")


@dataclass(frozen=True)
class SimulationConfig:
    scenario: str = "i"
    n: int = 250
    reps: int = 500
    seed: int = 0
    sigma_choice: int = 1
    alpha: float = 0.5
    cuts: tuple[CutPair, ...] = tuple(CutPair(*c) for c in SCENARIO_I_CUTS)
    estimators: tuple[str, ...] = ("fi", "msi", "ipw", "spe", "knn")
    k: tuple[int, ...] = (1, 3)
    metric: str = "euclidean"
    k_bar: int = DEFAULT_K_BAR

    def scenario_config(self):
        if self.scenario == "i":
            return ScenarioIConfig.with_sigma_choice(self.sigma_choice, n=self.n, seed=self.seed)
        return ScenarioIIConfig(alpha=self.alpha, n=self.n, seed=self.seed)

    def estimator_specs(self) -> list[EstimatorSpec]:
        scen = self.scenario_config()
        dform, vform = scen.default_formulas()
        metric = Metric.parse(self.metric)
        specs = []
        for name in self.estimators:
            tag = EstimatorTag(name)
            if tag is EstimatorTag.KNN:
                specs.extend(EstimatorSpec(tag, k=k, metric=metric, k_bar=self.k_bar) for k in self.k)
            elif tag is EstimatorTag.COMPLETE:
                raise ValidationError("the complete-data estimator does not apply to simulated partial data")
            else:
                specs.append(EstimatorSpec(tag, disease_formula=dform, verification_formula=vform))
        return specs

    def run(self, workers: int = 1) -> SummaryTable:
        return run_monte_carlo(
            self.scenario_config(), self.estimator_specs(), self.cuts, self.reps, self.seed, workers
        )


def parse_cuts(text: str) -> tuple[CutPair, ...]:
    """``"2,4;2,5"`` into cut pairs."""
    pairs = tuple(CutPair.parse(p.strip()) for p in text.split(";") if p.strip())
    if not pairs:
        raise ValidationError("at least one cut pair is required")
    return pairs


def load_simulation_config(text: str) -> SimulationConfig:
    """Parse flat ``key = value`` lines (``#`` comments allowed)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string("[sim]\n" + text)
    except configparser.Error as exc:
        raise ValidationError(f"malformed config: {exc}") from None
    raw = dict(parser["sim"])
    unknown = set(raw) - set(CONFIG_KEYS)
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(sorted(unknown))}")
    kw = {}
    try:
        if "scenario" in raw:
            scen = raw["scenario"].strip().lower()
            if scen not in ("i", "ii", "1", "2"):
                raise ValidationError(f"scenario must be i or ii, got {raw['scenario']!r}")
            kw["scenario"] = {"1": "i", "2": "ii"}.get(scen, scen)
        for key in ("n", "reps", "seed", "sigma_choice", "k_bar"):
            if key in raw:
                kw[key] = int(raw[key])
        if "alpha" in raw:
            kw["alpha"] = float(raw["alpha"])
        if "k" in raw:
            kw["k"] = tuple(int(x) for x in raw["k"].split(",") if x.strip())
        if "estimators" in raw:
            kw["estimators"] = tuple(x.strip().lower() for x in raw["estimators"].split(",") if x.strip())
            for e in kw["estimators"]:
                EstimatorTag(e)
        if "metric" in raw:
            Metric.parse(raw["metric"])
            kw["metric"] = raw["metric"].strip().lower()
    except ValueError as exc:
        raise ValidationError(f"malformed config value: {exc}") from None
    if "cuts" in raw:
        kw["cuts"] = parse_cuts(raw["cuts"])
    elif kw.get("scenario") == "ii":
        kw["cuts"] = tuple(CutPair(*c) for c in SCENARIO_II_CUTS)
    if kw.get("scenario") == "ii" and "n" not in kw:
        kw["n"] = 1000
    return SimulationConfig(**kw)
