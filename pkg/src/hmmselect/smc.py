"""Bootstrap particle filter with log-likelihood and score estimation.

The filter proposes from the transition kernel and weights by the observation
density, resampling adaptively when the effective sample size drops below a
threshold fraction of N.  When score tracking is on, each particle carries a
running tag alpha_t^(i) approximating the gradient of log p(x_t^(i), y_{0:t});
tags are updated by a pairwise weighted average over the previous cloud
(quadratic cost in N) and follow their ancestors through resampling.  The
filter's score estimate at time t is the weighted average of the tags.

All weight arithmetic is in log space with max subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._kernels import ar1_score_update
from .errors import DegenerateFilterError
from .models import HmmModel, Theta
from .seeding import make_rng

__all__ = [
    "ParticleState",
    "FilterOutput",
    "ess",
    "resample",
    "init_filter",
    "bootstrap_step",
    "score_step",
    "run_filter",
]


def ess(weights: np.ndarray) -> float:
    """Effective sample size 1 / sum(w_i^2) of normalised weights."""
    w = np.asarray(weights, dtype=float)
    return 1.0 / float(w @ w)


def resample(weights, scheme: str, rng: np.random.Generator, n_samples: int | None = None) -> np.ndarray:
    """Ancestor indices drawn from normalised ``weights``.

    ``systematic`` uses a single uniform and the stratified grid (u + k) / n;
    ``multinomial`` draws n independent uniforms.
    """
    w = np.asarray(weights, dtype=float)
    n = len(w) if n_samples is None else int(n_samples)
    cdf = np.cumsum(w)
    if scheme == "systematic":
        positions = (rng.random() + np.arange(n)) / n
    elif scheme == "multinomial":
        positions = rng.random(n)
    else:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    idx = np.searchsorted(cdf, positions, side="right")
    return np.minimum(idx, len(w) - 1)


@dataclass(frozen=True, eq=False)
class ParticleState:
    """Weighted particle cloud after assimilating observation ``t``."""

    particles: np.ndarray
    log_weights: np.ndarray  # normalised, so logsumexp(log_weights) = 0
    weights: np.ndarray
    alphas: np.ndarray | None  # (N, d) score tags, present when tracking
    loglik_accum: float
    t: int
    resampled: bool = False

    @property
    def n_particles(self) -> int:
        return len(self.particles)

    def permuted(self, perm: np.ndarray) -> "ParticleState":
        """Reindex particles (bookkeeping tests); weights stay aligned."""
        return replace(
            self,
            particles=self.particles[perm],
            log_weights=self.log_weights[perm],
            weights=self.weights[perm],
            alphas=None if self.alphas is None else self.alphas[perm],
        )


@dataclass(frozen=True, eq=False)
class FilterOutput:
    loglik: float
    score: np.ndarray | None
    ess_trace: np.ndarray
    resample_count: int
    seed: int


def _normalise(log_w_unnorm: np.ndarray, t: int) -> tuple[float, np.ndarray, np.ndarray]:
    """(log mean increment handled by caller) -> (logsumexp, log weights, weights)."""
    m = np.max(log_w_unnorm)
    if not np.isfinite(m):
        raise DegenerateFilterError(t)
    total = m + np.log(np.sum(np.exp(log_w_unnorm - m)))
    log_w = log_w_unnorm - total
    w = np.exp(log_w)
    w /= w.sum()
    return float(total), log_w, w


def init_filter(
    model: HmmModel,
    theta: Theta,
    y0,
    n_particles: int,
    rng: np.random.Generator,
    track_score: bool = False,
) -> ParticleState:
    """Draw the initial cloud from the model's initial law and weight by y0."""
    x = np.asarray(model.sample_init(theta, rng, n_particles), dtype=float)
    log_g = np.asarray(model.log_g(theta, y0, x), dtype=float)
    log_norm, log_w, w = _normalise(log_g, 0)
    loglik = log_norm - np.log(n_particles)  # uniform prior weights 1/N
    alphas = None
    if track_score:
        alphas = model.grad_log_init(theta, x) + model.grad_log_g(theta, y0, x)
    return ParticleState(x, log_w, w, alphas, float(loglik), 0)


def score_step(prev: ParticleState, new_particles, y_t, model: HmmModel, theta: Theta) -> np.ndarray:
    """Score tags for ``new_particles`` given the previous tagged cloud.

    Implements the pairwise update

        alpha_t^(i) = grad log g(y_t | x_t^(i))
                      + sum_j wt_ij [ grad log q(x_t^(i) | x_{t-1}^(j)) + alpha_{t-1}^(j) ]

    with wt_ij = w_{t-1}^(j) q(x_t^(i) | x_{t-1}^(j)) normalised over j.
    """
    if prev.alphas is None:
        raise ValueError("previous state carries no score tags")
    x_new = np.asarray(new_particles, dtype=float)
    ar1 = model.ar1_params(theta)
    if ar1 is not None:
        phi, sigma, idx_phi, idx_sig = ar1
        out = np.empty((len(x_new), model.d))
        ar1_score_update(
            np.ascontiguousarray(prev.particles),
            np.ascontiguousarray(x_new),
            np.ascontiguousarray(prev.log_weights),
            np.ascontiguousarray(prev.alphas),
            float(phi),
            float(sigma),
            idx_phi,
            idx_sig,
            out,
        )
        mixed = out
    else:
        log_q = model.log_q(theta, prev.particles[None, :], x_new[:, None])
        lw = prev.log_weights[None, :] + log_q
        m = lw.max(axis=1, keepdims=True)
        if not np.all(np.isfinite(m)):
            raise DegenerateFilterError(prev.t + 1)
        wt = np.exp(lw - m)
        den = wt.sum(axis=1)
        grad_q = model.grad_log_q(theta, prev.particles[None, :], x_new[:, None])
        mixed = np.einsum("ij,ij...->i...", wt, grad_q + prev.alphas[None, :, :]) / den[:, None]
    return mixed + model.grad_log_g(theta, y_t, x_new)


def bootstrap_step(
    state: ParticleState,
    y_t,
    model: HmmModel,
    theta: Theta,
    rng: np.random.Generator,
    resample_threshold: float = 0.5,
    resample_scheme: str = "systematic",
) -> ParticleState:
    """Advance the filter by one observation.

    Order of operations: resample if ESS < threshold * N (tags follow their
    ancestors), propagate through the transition kernel, reweight by the
    observation density.  The log-likelihood increment is the log of the
    pre-weighted mean of the incremental weights, which stays exact whether
    or not resampling occurred.
    """
    n = state.n_particles
    resampled = ess(state.weights) < resample_threshold * n
    if resampled:
        ancestors = resample(state.weights, resample_scheme, rng)
        x_prev = state.particles[ancestors]
        alphas_prev = None if state.alphas is None else state.alphas[ancestors]
        log_w_prev = np.full(n, -np.log(n))
        w_prev = np.full(n, 1.0 / n)
    else:
        x_prev = state.particles
        alphas_prev = state.alphas
        log_w_prev = state.log_weights
        w_prev = state.weights
    prev = ParticleState(x_prev, log_w_prev, w_prev, alphas_prev, state.loglik_accum, state.t)

    x_new = np.asarray(model.sample_transition(theta, x_prev, rng), dtype=float)
    log_g = np.asarray(model.log_g(theta, y_t, x_new), dtype=float)
    increment, log_w, w = _normalise(log_w_prev + log_g, state.t + 1)
    alphas = None
    if state.alphas is not None:
        alphas = score_step(prev, x_new, y_t, model, theta)
    return ParticleState(
        x_new, log_w, w, alphas, state.loglik_accum + increment, state.t + 1, resampled
    )


def run_filter(
    model: HmmModel,
    theta: Theta,
    observations,
    n_particles: int,
    seed: int,
    track_score: bool = False,
    resample_threshold: float = 0.5,
    resample_scheme: str = "systematic",
) -> FilterOutput:
    """Filter the whole observation sequence; bit-reproducible given the seed."""
    model.validate(theta, interior=True)
    ys = np.asarray(observations, dtype=float)
    if n_particles < 1:
        raise ValueError("need at least one particle")
    rng = make_rng(seed)
    state = init_filter(model, theta, ys[0], n_particles, rng, track_score)
    ess_trace = np.empty(len(ys))
    ess_trace[0] = ess(state.weights)
    resample_count = 0
    for t in range(1, len(ys)):
        state = bootstrap_step(
            state, ys[t], model, theta, rng, resample_threshold, resample_scheme
        )
        ess_trace[t] = ess(state.weights)
        resample_count += state.resampled
    score = None
    if track_score:
        score = state.weights @ state.alphas
    return FilterOutput(state.loglik_accum, score, ess_trace, resample_count, seed)
