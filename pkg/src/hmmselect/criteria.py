"""Information criteria and model selection.

AIC and BIC use the -2 log-likelihood convention; the generalised criterion
uses -log-likelihood plus an arbitrary penalty pen(k, n) increasing in the
model index k.  A numerical classifier sorts penalty growth into the regimes
that make the criterion strongly consistent (gap outgrows log log n while
staying o(n)), weakly consistent (gap diverges but no faster than log log n),
or inconsistent (bounded gap, or gap of order n).

The log-evidence is approximated by a Laplace expansion around the fitted
parameter, with the observed information estimated from common-seed particle
log-likelihood curvature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import EvidenceUnavailableError, ParameterError, PenaltyClassificationError
from .models import HmmModel, Theta
from .seeding import derive_seed
from .smc import run_filter

__all__ = [
    "aic",
    "bic",
    "generalized_ic",
    "PenaltyFn",
    "classify_penalty",
    "DEFAULT_PENALTY_GRID",
    "IcResult",
    "ComparisonResult",
    "make_ic_result",
    "compare_models",
    "select",
    "laplace_from_parts",
    "estimate_observed_information",
    "laplace_log_evidence",
    "default_prior_log_density",
    "ObservedInformationProjected",
    "IC_RESULT_CSV_HEADER",
    "ic_result_csv_row",
]


def aic(loglik_hat: float, d: int) -> float:
    """-2 loglik + 2 d."""
    if d < 0:
        raise ValueError("d must be >= 0")
    return -2.0 * loglik_hat + 2.0 * d


def bic(loglik_hat: float, d: int, n: float) -> float:
    """-2 loglik + d log n."""
    if d < 0 or n < 1:
        raise ValueError("need d >= 0 and n >= 1")
    return -2.0 * loglik_hat + d * math.log(n)


@dataclass(frozen=True)
class PenaltyFn:
    """Penalty evaluator pen(k, n) over model index k and sample size n."""

    fn: Callable[[int, float], float]
    name: str = ""

    def __call__(self, k: int, n: float) -> float:
        return float(self.fn(k, n))

    def check_increasing(self, ks: Sequence[int], n: float) -> None:
        """Verify strict growth in k at fixed n over a configured model ladder."""
        vals = [self(k, n) for k in ks]
        for k, (a, b) in zip(ks, zip(vals, vals[1:])):
            if not b > a:
                raise ParameterError(f"penalty not increasing between k={k} and k={k + 1} at n={n}")

    @classmethod
    def aic_style(cls, dims: Sequence[int]) -> "PenaltyFn":
        """pen(k, n) = d_k (constant in n)."""
        dims = tuple(dims)
        return cls(lambda k, n: float(dims[k]), "aic-style")

    @classmethod
    def bic_style(cls, dims: Sequence[int]) -> "PenaltyFn":
        """pen(k, n) = (d_k / 2) log n."""
        dims = tuple(dims)
        return cls(lambda k, n: 0.5 * dims[k] * math.log(n), "bic-style")


def generalized_ic(loglik_hat: float, pen: PenaltyFn, k: int, n: float) -> float:
    """-loglik + pen(k, n); note the single (not doubled) log-likelihood."""
    return -loglik_hat + pen(k, n)


DEFAULT_PENALTY_GRID = (1e3, 1e4, 1e6, 1e8)


def classify_penalty(
    pen: PenaltyFn,
    k: int,
    k_prime: int,
    n_grid: Sequence[float] = DEFAULT_PENALTY_GRID,
    decay_ratio: float = 1e3,
    growth_factor: float = 1.2,
) -> str:
    """Classify the growth of pen(k', n) - pen(k, n) as of one of
    ``strong`` / ``weak`` / ``inconsistent``.

    Heuristic grid proxies for the limit conditions:
      * the gap over n must decay by at least ``decay_ratio`` across the grid
        (proxy for gap/n -> 0); otherwise inconsistent;
      * gap / log log n increasing by at least ``growth_factor`` -> strong;
      * else gap itself increasing by at least ``growth_factor`` -> weak
        (diverging but no faster than log log n);
      * else inconsistent (bounded gap).
    """
    if not k_prime > k:
        raise ValueError("need k_prime > k")
    grid = [float(n) for n in n_grid]
    if len(grid) < 4 or any(b <= a for a, b in zip(grid, grid[1:])) or grid[-1] < 1e8:
        raise ValueError("n_grid must be increasing, length >= 4, max >= 1e8")

    delta = np.array([pen(k_prime, n) - pen(k, n) for n in grid])
    if np.any(delta <= 0.0):
        raise PenaltyClassificationError("penalty gap must be positive on the grid")
    if np.any(delta[1:] < delta[:-1] * (1.0 - 1e-12)):
        raise PenaltyClassificationError("penalty gap is not monotone on the grid")

    per_n = delta / np.asarray(grid)
    if np.any(per_n[1:] > per_n[:-1]) or per_n[0] < decay_ratio * per_n[-1]:
        return "inconsistent"

    loglog = np.log(np.log(grid))
    ratio = delta / loglog
    if np.all(ratio[1:] >= ratio[:-1] * (1.0 - 1e-12)) and ratio[-1] >= growth_factor * ratio[0]:
        return "strong"
    if delta[-1] >= growth_factor * delta[0]:
        return "weak"
    return "inconsistent"


# -- per-model results and selection ------------------------------------------


@dataclass(frozen=True)
class IcResult:
    model_name: str
    d: int
    n: int
    loglik_hat: float
    aic: float
    bic: float
    generalized_ic: float | None = None
    log_evidence: float | None = None


def make_ic_result(
    model_name: str,
    d: int,
    n: int,
    loglik_hat: float,
    pen: PenaltyFn | None = None,
    k: int | None = None,
    log_evidence: float | None = None,
) -> IcResult:
    gic = None if pen is None else generalized_ic(loglik_hat, pen, k, n)
    return IcResult(model_name, d, n, loglik_hat, aic(loglik_hat, d), bic(loglik_hat, d, n), gic, log_evidence)


_CRITERION_FIELD = {
    "aic": ("aic", 1.0),
    "bic": ("bic", 1.0),
    "generalized": ("generalized_ic", 1.0),
    "evidence": ("log_evidence", -1.0),  # maximise
}


def select(results: Sequence[IcResult], criterion: str) -> int:
    """Index of the winning model; exact ties break toward smaller d."""
    if not results:
        raise ValueError("empty result list")
    field_name, sign = _CRITERION_FIELD[criterion]
    best = None
    for i, r in enumerate(results):
        value = getattr(r, field_name)
        if value is None:
            raise ValueError(f"model {r.model_name} has no {field_name}")
        key = (sign * value, r.d)
        if best is None or key < best[0]:
            best = (key, i)
    return best[1]


@dataclass(frozen=True)
class ComparisonResult:
    results: tuple[IcResult, ...]
    lambda_n: float | None
    selected_by_aic: int
    selected_by_bic: int
    selected_by_evidence: int | None


def compare_models(
    results: Sequence[IcResult], nested_pair: tuple[int, int] | None = (0, 1)
) -> ComparisonResult:
    """Bundle selections; ``nested_pair`` names (smaller, larger) model indices
    whose fitted log-likelihood gap is reported as lambda_n."""
    results = tuple(results)
    lam = None
    if nested_pair is not None and len(results) > max(nested_pair):
        small, big = nested_pair
        lam = results[big].loglik_hat - results[small].loglik_hat
    has_evidence = all(r.log_evidence is not None for r in results)
    return ComparisonResult(
        results,
        lam,
        select(results, "aic"),
        select(results, "bic"),
        select(results, "evidence") if has_evidence else None,
    )


IC_RESULT_CSV_HEADER = "model,d,n,loglik,aic,bic,log_evidence"


def ic_result_csv_row(r: IcResult) -> str:
    ev = "" if r.log_evidence is None else "%.17g" % r.log_evidence
    return "%s,%d,%d,%.17g,%.17g,%.17g,%s" % (r.model_name, r.d, r.n, r.loglik_hat, r.aic, r.bic, ev)


# -- Laplace log-evidence -------------------------------------------------------


class ObservedInformationProjected(UserWarning):
    """Raised as a warning when the curvature estimate needed eigenvalue clipping."""


def laplace_from_parts(loglik_hat: float, d: int, n: int, obs_info, prior_log_density_value: float) -> float:
    """loglik + (d/2) log 2 pi - (d/2) log n - 0.5 log det(J) + log prior.

    ``obs_info`` is the per-observation observed information J (scalar for
    d = 1 or a (d, d) matrix), assumed positive definite.
    """
    j = np.atleast_2d(np.asarray(obs_info, dtype=float))
    sign, logdet = np.linalg.slogdet(j)
    if sign <= 0:
        raise EvidenceUnavailableError("observed information must be positive definite")
    return (
        loglik_hat
        + 0.5 * d * math.log(2.0 * math.pi)
        - 0.5 * d * math.log(n)
        - 0.5 * logdet
        + prior_log_density_value
    )


def estimate_observed_information(
    model: HmmModel,
    theta_hat: Theta,
    observations,
    n_particles: int,
    seed: int,
    fd_step: float = 0.05,
    n_seeds: int = 5,
) -> np.ndarray:
    """Observed information -Hessian/n of the log-likelihood at theta_hat,
    in unconstrained coordinates.

    Hessian columns come from central differences of the particle score
    estimate (2d score-tracked filter runs per replicate); every evaluation
    within a replicate shares a filter seed so Monte Carlo noise largely
    cancels, and replicates over independent seeds are averaged.  Differencing
    the score rather than the log-likelihood keeps the resampling-induced
    discontinuities from being amplified by a 1/step^2 factor.
    """
    ys = np.asarray(observations, dtype=float)
    n = len(ys)
    d = model.d
    v0 = model.to_unconstrained(theta_hat)
    h = fd_step

    def score_u(v, rep_seed):
        # filter score is in natural coordinates; pull back through the transform
        theta = model.to_natural(v)
        out = run_filter(model, theta, ys, n_particles, rep_seed, track_score=True)
        return model.transform_jacobian(theta) * out.score

    hessians = []
    for rep in range(n_seeds):
        rep_seed = derive_seed(seed, rep)
        hess = np.empty((d, d))
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = h
            hess[:, i] = (score_u(v0 + ei, rep_seed) - score_u(v0 - ei, rep_seed)) / (2.0 * h)
        hessians.append(0.5 * (hess + hess.T))

    info = -np.mean(hessians, axis=0) / n
    return 0.5 * (info + info.T)


def _fix_positive_definite(info: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(info)):
        raise EvidenceUnavailableError("non-finite observed information estimate")
    eigvals, eigvecs = np.linalg.eigh(info)
    if eigvals.max() <= 0.0:
        raise EvidenceUnavailableError("observed information indefinite beyond repair")
    if eigvals.min() <= 0.0:
        warnings.warn(
            "observed information projected to positive definite", ObservedInformationProjected
        )
        floor = 1e-8 * eigvals.max()
        eigvals = np.maximum(eigvals, floor)
        info = (eigvecs * eigvals) @ eigvecs.T
    return info


def laplace_log_evidence(
    loglik_hat: float,
    theta_hat: Theta,
    observations,
    model: HmmModel,
    prior_log_density: Callable[[Theta], float],
    n_particles: int,
    seed: int,
    fd_step: float = 0.05,
    n_seeds: int = 5,
) -> float:
    """Laplace approximation of the log marginal likelihood at theta_hat.

    The curvature is estimated in unconstrained coordinates; the prior (a
    density over natural parameters) picks up the transform's Jacobian so the
    result approximates the same parameterisation-free integral.
    """
    info = estimate_observed_information(
        model, theta_hat, observations, n_particles, seed, fd_step, n_seeds
    )
    info = _fix_positive_definite(info)
    log_jac = float(np.sum(np.log(np.abs(model.transform_jacobian(theta_hat)))))
    prior_value = float(prior_log_density(theta_hat)) + log_jac
    return laplace_from_parts(loglik_hat, model.d, len(np.asarray(observations)), info, prior_value)


def default_prior_log_density(model: HmmModel) -> Callable[[Theta], float]:
    """Independent proper prior: uniform for correlation/probability
    parameters over their natural range, Exponential(1) for scales."""

    def log_density(theta: Theta) -> float:
        total = 0.0
        for kind, value in zip(model._kinds, theta.natural):
            if kind == "corr":
                total += -math.log(2.0)
            elif kind == "pos":
                total += -value
            # prob: uniform on (0,1), density 1
        return total

    return log_density
