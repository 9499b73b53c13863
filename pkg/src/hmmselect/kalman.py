"""Exact filter for the linear-Gaussian model.

Provides the oracle log-likelihood, its exact parameter gradient via tangent
(sensitivity) recursions on the filter mean/variance, and an exact-likelihood
maximiser.  Used throughout the test suite to verify the particle machinery
and to run cheap consistency studies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from ._kernels import kalman_pass
from .errors import ParameterError
from .models import LinearGaussianModel, Theta

__all__ = [
    "KalmanState",
    "kalman_states",
    "kalman_loglik",
    "kalman_score",
    "kalman_loglik_and_score",
    "kalman_mle",
    "KalmanMleResult",
]

_LG = LinearGaussianModel()


def _as_params(theta) -> tuple[float, float, float]:
    if isinstance(theta, Theta):
        vals = theta.natural
    else:
        vals = np.asarray(theta, dtype=float).reshape(-1)
    if vals.shape != (3,):
        raise ParameterError("linear-Gaussian theta is (phi, sigma_x, sigma_v)")
    phi, sx, sv = (float(v) for v in vals)
    if not (np.isfinite(phi) and abs(phi) < 1.0):
        raise ParameterError(f"|phi| must be < 1 for a stationary filter, got {phi}")
    if not (sx > 0.0 and sv > 0.0 and np.isfinite(sx) and np.isfinite(sv)):
        raise ParameterError("sigma_x and sigma_v must be positive")
    return phi, sx, sv


@dataclass(frozen=True)
class KalmanState:
    """Filter state after assimilating observation ``t``."""

    t: int
    mean: float
    variance: float
    loglik_accum: float
    dmean: tuple[float, float, float]
    dvariance: tuple[float, float, float]


def kalman_states(theta, observations) -> Iterator[KalmanState]:
    """Yield the filtering state step by step (transparent reference path).

    The compiled pass in ``kalman_loglik``/``kalman_score`` implements the
    same recursion; the test suite pins their agreement.
    """
    phi, sx, sv = _as_params(theta)
    one_m = 1.0 - phi * phi
    mp, pp = 0.0, sx * sx / one_m
    dmp = np.zeros(3)
    dpp = np.array([2.0 * phi * sx * sx / one_m**2, 2.0 * sx / one_m, 0.0])
    loglik = 0.0
    for t, y in enumerate(np.asarray(observations, dtype=float)):
        s = pp + sv * sv
        ds = dpp + np.array([0.0, 0.0, 2.0 * sv])
        e = y - mp
        loglik += -0.5 * np.log(2.0 * np.pi * s) - e * e / (2.0 * s)
        k = pp / s
        dk = (dpp * s - pp * ds) / (s * s)
        m = mp + k * e
        dm = dmp + dk * e - k * dmp
        p = (1.0 - k) * pp
        dp = -dk * pp + (1.0 - k) * dpp
        yield KalmanState(t, m, p, loglik, tuple(dm), tuple(dp))
        mp = phi * m
        dmp = np.array([m, 0.0, 0.0]) + phi * dm
        pp = phi * phi * p + sx * sx
        dpp = np.array([2.0 * phi * p, 2.0 * sx, 0.0]) + phi * phi * dp


def _pass(theta, observations):
    phi, sx, sv = _as_params(theta)
    ys = np.ascontiguousarray(observations, dtype=float)
    if ys.ndim != 1:
        raise ValueError("observations must be a 1-d array")
    loglik, grad, min_var = kalman_pass(ys, phi, sx, sv)
    if min_var < 0.0:
        raise ParameterError("negative predictive variance; parameters out of range")
    return float(loglik), grad


def kalman_loglik(theta, observations) -> float:
    """Exact log p(y_{0:n-1}) under the linear-Gaussian model."""
    return _pass(theta, observations)[0]


def kalman_score(theta, observations) -> np.ndarray:
    """Exact gradient of ``kalman_loglik`` in (phi, sigma_x, sigma_v).

    Sensitivities are propagated through the stationary initial variance, so
    the result matches finite differences of ``kalman_loglik`` in which the
    initial law moves with theta.
    """
    return _pass(theta, observations)[1]


def kalman_loglik_and_score(theta, observations) -> tuple[float, np.ndarray]:
    return _pass(theta, observations)


@dataclass(frozen=True)
class KalmanMleResult:
    theta: Theta
    loglik: float
    score: np.ndarray
    converged: bool
    n_iter: int

    @property
    def score_norm(self) -> float:
        return float(np.linalg.norm(self.score))


def kalman_mle(
    observations,
    init_theta: Theta,
    frozen: Iterable[str] = (),
    tol: float = 1e-8,
    max_iter: int = 500,
) -> KalmanMleResult:
    """Maximise the exact log-likelihood by gradient ascent with backtracking.

    Works in unconstrained coordinates (atanh phi, log sigmas); the step
    length starts from a Barzilai-Borwein estimate and is halved until the
    Armijo condition holds.  Parameters named in ``frozen`` are clamped to
    their value in ``init_theta``; the returned score covers free parameters
    only (frozen components are reported as zero).
    """
    ys = np.asarray(observations, dtype=float)
    if ys.size < 3:
        raise ValueError("need at least 3 observations")
    frozen = tuple(frozen)
    for name in frozen:
        if name not in _LG.param_names:
            raise ParameterError(f"unknown parameter {name!r}")
    free = np.array([name not in frozen for name in _LG.param_names])
    if not free.any():
        theta = init_theta
        return KalmanMleResult(theta, kalman_loglik(theta, ys), np.zeros(3), True, 0)

    v_full = _LG.to_unconstrained(init_theta)
    frozen_values = init_theta.natural[~free]

    def objective(v_free):
        v = v_full.copy()
        v[free] = v_free
        try:
            nat = _LG.to_natural(v).natural.copy()
            nat[~free] = frozen_values  # keep clamped values exact, no transform round trip
            theta = Theta(nat, _LG.param_names)
            loglik, grad_nat = kalman_loglik_and_score(theta, ys)
        except (ParameterError, FloatingPointError, OverflowError):
            return None, -np.inf, None
        if not np.isfinite(loglik):
            return None, -np.inf, None
        g = (grad_nat * _LG.transform_jacobian(theta))[free]
        return theta, loglik, g

    v = v_full[free].copy()
    theta, f, g = objective(v)
    if theta is None:
        raise ParameterError("initial point has non-finite likelihood")
    best = (theta, f, g, v)
    recent = [f]  # nonmonotone reference window; plain Armijo would defeat BB steps
    v_prev = g_prev = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm < tol:
            converged = True
            break
        if v_prev is None:
            alpha = 1.0 / (1.0 + gnorm)
        else:
            s = v - v_prev
            yv = g_prev - g
            denom = float(s @ yv)
            alpha = float(s @ s) / denom if denom > 1e-300 else 1.0
            alpha = min(max(alpha, 1e-14), 1e4)
        f_ref = min(recent)
        accepted = False
        for _ in range(60):
            v_try = v + alpha * g
            theta_try, f_try, g_try = objective(v_try)
            if f_try >= f_ref + 1e-4 * alpha * gnorm * gnorm:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break  # line search stalled; keep best point
        v_prev, g_prev = v, g
        v, theta, f, g = v_try, theta_try, f_try, g_try
        recent.append(f)
        if len(recent) > 10:
            recent.pop(0)
        if f > best[1]:
            best = (theta, f, g, v)

    if not converged:
        theta, f, g, _ = best  # line search stalled or iteration cap: best point found
        converged = float(np.linalg.norm(g)) < tol
    score = np.zeros(3)
    score[free] = g
    return KalmanMleResult(theta, f, score, converged, it)
