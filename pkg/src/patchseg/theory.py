"""Pixel-error bound for pointwise 1NN/WMV segmentation and its Monte Carlo check.

The bound on the expected fraction of mislabeled pixels is

    |I| * C_max * exp(-n rho_min / 8)  +  |N| * n * exp(-G / (16 sigma^2))

with ``G`` the training-set separation gap. :func:`required_n` and
:func:`required_gap` give the sufficient conditions making each term at most
``eps / 2``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import beta as beta_dist
from scipy.stats import norm

from ._accel import n_workers
from .errors import ContractViolation
from .lattice import Neighborhood
from .models import PointwiseModel, sample_pointwise_pair, sample_training_set, verify_jigsaw
from .pointwise import PointwiseConfig, segment_pointwise, separation_gap, default_theta


@dataclass(frozen=True)
class BoundParams:
    n_pixels: int
    c_max: int
    n: int
    rho_min: float
    n_neighbors: int
    gap: float
    sigma: float

    def __post_init__(self):
        if self.n_pixels < 1 or self.c_max < 1 or self.n < 1 or self.n_neighbors < 1:
            raise ContractViolation("pixel count, C_max, n and |N| must be positive")
        if not 0 < self.rho_min <= 1:
            raise ContractViolation("rho_min must lie in (0, 1]")
        if not self.gap >= 0:
            raise ContractViolation("gap must be nonnegative")
        if not self.sigma >= 0:
            raise ContractViolation("sigma must be nonnegative")


def bound_terms(p: BoundParams) -> tuple[float, float]:
    term1 = p.n_pixels * p.c_max * math.exp(-p.n * p.rho_min / 8.0)
    if math.isinf(p.gap):
        term2 = 0.0
    elif p.sigma == 0:
        # noiseless limit: the exponential vanishes unless the gap is zero
        term2 = 0.0 if p.gap > 0 else float(p.n_neighbors * p.n)
    else:
        term2 = p.n_neighbors * p.n * math.exp(-p.gap / (16.0 * p.sigma**2))
    return term1, term2


def theorem1_bound(p: BoundParams) -> float:
    """Bound value; may exceed 1, see :func:`is_vacuous`."""
    return sum(bound_terms(p))


def is_vacuous(value: float) -> bool:
    return value >= 1.0


def required_n(eps: float, n_pixels: int, c_max: int, rho_min: float) -> int:
    """Smallest n with ``n >= (8/rho_min) log(2 |I| C_max / eps)``."""
    if not 0 < eps < 1:
        raise ContractViolation("eps must lie in (0, 1)")
    threshold = 8.0 / rho_min * math.log(2.0 * n_pixels * c_max / eps)
    return max(1, math.ceil(threshold))


def required_gap(eps: float, n_neighbors: int, n: int, sigma: float) -> float:
    """Gap threshold ``16 sigma^2 log(2 |N| n / eps)``."""
    if not 0 < eps < 1:
        raise ContractViolation("eps must lie in (0, 1)")
    return 16.0 * sigma**2 * math.log(2.0 * n_neighbors * n / eps)


def binomial_ci(errors: int, total: int, level: float = 0.95) -> tuple[float, float]:
    """Normal-approximation interval; Clopper-Pearson when no errors were seen."""
    if total <= 0:
        raise ContractViolation("confidence interval needs at least one observation")
    alpha = 1.0 - level
    if errors == 0:
        return 0.0, float(beta_dist.ppf(1.0 - alpha / 2.0, 1, total))
    p = errors / total
    z = float(norm.ppf(1.0 - alpha / 2.0))
    half = z * math.sqrt(p * (1.0 - p) / total)
    return max(0.0, p - half), min(1.0, p + half)


@dataclass
class TrialReport:
    algorithm: str
    n: int
    theta: float
    trials: int
    error_rates: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    mean_error: float = 0.0
    ci_low: float = 0.0
    ci_high: float = 0.0
    bound: float = math.inf
    vacuous: bool = True
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = asdict(self)
        for key in ("theta", "bound"):
            if math.isinf(doc[key]):
                doc[key] = "inf"
        doc["gaps"] = ["inf" if math.isinf(g) else g for g in doc["gaps"]]
        doc["params"] = {k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in doc["params"].items()}
        return json.dumps(doc, indent=2)

    CSV_FIELDS = ("algorithm", "n", "theta", "trials", "mean_error", "ci_low", "ci_high", "min_gap", "bound", "vacuous")

    def csv_row(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "n": self.n,
            "theta": self.theta,
            "trials": self.trials,
            "mean_error": self.mean_error,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "min_gap": min(self.gaps) if self.gaps else math.inf,
            "bound": self.bound,
            "vacuous": self.vacuous,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerow(self.csv_row())
        return buf.getvalue()


def _covers(model: PointwiseModel, neighborhood: Neighborhood) -> bool:
    lat = model.lattice
    search = neighborhood.table(lat)
    star = model.jigsaw.table(lat)
    for p in range(lat.size):
        if not set(star[p][star[p] >= 0]) <= set(search[p][search[p] >= 0]):
            return False
    return True


def _run_trial(model, n, cfg, seed):
    rng = np.random.default_rng(seed)
    train = sample_training_set(model, n, rng)
    Y, truth = sample_pointwise_pair(model, rng)
    pred = segment_pointwise(Y, train, cfg)
    errors = int(np.count_nonzero(pred != truth))
    gap = separation_gap(train, cfg.neighborhood, cfg.patch)
    return errors, gap


def monte_carlo_error(
    model: PointwiseModel,
    algorithm: str,
    n: int,
    neighborhood: Neighborhood,
    theta: float | None = None,
    trials: int = 200,
    seed: int = 0,
    workers: int | None = None,
) -> TrialReport:
    """Estimate the expected pixel error rate and compare it with the bound.

    Each trial draws a fresh training set of size ``n`` and a test pair. The
    bound uses the smallest gap realized across trials. Refuses to run if the
    model violates the jigsaw condition or ``neighborhood`` does not contain
    the model's N*.
    """
    if algorithm not in ("nn", "wmv"):
        raise ContractViolation("algorithm must be 'nn' or 'wmv'")
    if not verify_jigsaw(model).holds:
        raise ContractViolation("model violates the jigsaw condition")
    if not _covers(model, neighborhood):
        raise ContractViolation("search neighborhood must contain the jigsaw neighborhood at every pixel")
    if algorithm == "nn":
        theta = math.inf
    elif theta is None:
        theta = default_theta(model.noise.sigma)
    cfg = PointwiseConfig(neighborhood, model.patch, theta)

    seeds = np.random.SeedSequence(seed).spawn(trials)
    workers = workers or n_workers()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda s: _run_trial(model, n, cfg, s), seeds))
    else:
        results = [_run_trial(model, n, cfg, s) for s in seeds]

    P = model.lattice.size
    errors = [e for e, _ in results]
    gaps = [g for _, g in results]
    total_errors = sum(errors)
    lo, hi = binomial_ci(total_errors, trials * P)
    sigma = model.noise.sigma
    params = dict(
        n_pixels=P,
        c_max=model.c_max,
        n=n,
        rho_min=model.rho_min,
        n_neighbors=neighborhood.max_size(model.lattice),
        gap=min(gaps),
        sigma=sigma,
    )
    bound = theorem1_bound(BoundParams(**params))
    return TrialReport(
        algorithm=algorithm,
        n=n,
        theta=theta,
        trials=trials,
        error_rates=[e / P for e in errors],
        gaps=gaps,
        mean_error=total_errors / (trials * P),
        ci_low=lo,
        ci_high=hi,
        bound=bound,
        vacuous=is_vacuous(bound),
        params=params,
    )
