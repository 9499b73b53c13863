"""Online gradient-ascent parameter estimation.

One pass over the data: the particle filter assimilates each observation at
the current parameter iterate, the change in the filter's running score
estimate supplies the incremental gradient of the predictive log-density, and
the iterate moves by a decreasing step

    theta_{k+1} = theta_k + gamma_{k+1} * increment,   gamma_k = c k^{-a}.

Updates happen in unconstrained coordinates so every iterate stays inside the
constraint set.  Because score tags are carried across parameter changes, the
increments at consecutive steps are evaluated at consecutive iterates; with
the step size forced to zero the increments telescope exactly to the
fixed-parameter filter's score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFilterError
from .models import HmmModel, Theta
from .seeding import derive_seed, make_rng
from .smc import ParticleState, bootstrap_step, init_filter, run_filter

__all__ = [
    "StepSchedule",
    "step_size",
    "OnlineFitState",
    "online_gradient_step",
    "fit_online",
    "FitReport",
    "default_init_theta",
]

BURN_IN_STEPS = 100
BURN_IN_FACTOR = 0.1
GRADIENT_CLIP_NORM = 10.0


@dataclass(frozen=True)
class StepSchedule:
    """gamma_k = scale * k^(-exponent) with exponent in (0.5, 1].

    That range makes sum(gamma) diverge while sum(gamma^2) converges.  A zero
    scale is admitted as an explicit "frozen" schedule: the filter advances
    but the iterate never moves.
    """

    scale: float = 1.0
    exponent: float = 2.0 / 3.0

    def __post_init__(self):
        if not 0.5 < self.exponent <= 1.0:
            raise ValueError(f"exponent must lie in (0.5, 1], got {self.exponent}")
        if not self.scale >= 0.0:
            raise ValueError(f"scale must be >= 0, got {self.scale}")

    def __call__(self, k: int) -> float:
        if k < 1:
            raise ValueError("step index starts at 1")
        return self.scale * float(k) ** (-self.exponent)


def step_size(schedule: StepSchedule, k: int) -> float:
    return schedule(k)


@dataclass(frozen=True, eq=False)
class OnlineFitState:
    """Iterate, tagged particle cloud and trace after k assimilated observations."""

    model: HmmModel
    schedule: StepSchedule
    theta: Theta
    v: np.ndarray  # unconstrained coordinates of theta
    particle: ParticleState | None
    k: int
    prev_score: np.ndarray  # filter score estimate after observation k-1
    score_telescope: np.ndarray  # running sum of raw increments (diagnostic)
    trace: list = field(default_factory=list)  # (k, natural parameter tuple)

    @classmethod
    def initial(cls, model: HmmModel, schedule: StepSchedule, init_theta: Theta) -> "OnlineFitState":
        v = model.to_unconstrained(init_theta)
        zeros = np.zeros(model.d)
        return cls(model, schedule, init_theta, v, None, 0, zeros, zeros.copy(), [])


def online_gradient_step(
    state: OnlineFitState,
    y_t,
    model: HmmModel,
    rng: np.random.Generator,
    n_particles: int | None = None,
    resample_threshold: float = 0.5,
) -> OnlineFitState:
    """Assimilate one observation at the current iterate and update it.

    ``n_particles`` is only consulted on the very first call (it sizes the
    initial cloud); afterwards the cloud size is fixed.
    """
    if state.particle is None:
        if n_particles is None:
            raise ValueError("first step needs n_particles")
        ps = init_filter(model, state.theta, y_t, n_particles, rng, track_score=True)
    else:
        ps = bootstrap_step(state.particle, y_t, model, state.theta, rng, resample_threshold)
    score = ps.weights @ ps.alphas
    increment = score - state.prev_score

    grad_u = model.transform_jacobian(state.theta) * increment
    grad_u[~np.isfinite(grad_u)] = 0.0
    norm = float(np.linalg.norm(grad_u))
    if norm > GRADIENT_CLIP_NORM:
        grad_u *= GRADIENT_CLIP_NORM / norm

    k_next = state.k + 1
    gamma = state.schedule(k_next)
    if state.k < BURN_IN_STEPS:
        gamma *= BURN_IN_FACTOR
    if gamma != 0.0:
        v_new = state.v + gamma * grad_u
        theta_new = model.to_natural(v_new)
    else:
        v_new, theta_new = state.v, state.theta

    state.trace.append((k_next,) + tuple(theta_new.natural))
    return OnlineFitState(
        model,
        state.schedule,
        theta_new,
        v_new,
        ps,
        k_next,
        score,
        state.score_telescope + increment,
        state.trace,
    )


@dataclass(frozen=True, eq=False)
class FitReport:
    theta_hat: Theta
    loglik_hat: float
    n_particles: int
    n_obs: int
    seed: int
    eval_seed: int
    trace_path: str | None


def default_init_theta(model: HmmModel) -> Theta:
    """Interior, deliberately uninformative starting point."""
    defaults = {"phi": 0.5, "sigma_x": 1.0, "sigma_j": 1.0, "p": 0.5, "sigma_v": 1.0}
    return model.theta(**{name: defaults[name] for name in model.param_names})


def fit_online(
    model: HmmModel,
    observations,
    n_particles: int,
    schedule: StepSchedule,
    init_theta: Theta,
    seed: int,
    trace_path=None,
    resample_threshold: float = 0.5,
) -> FitReport:
    """Run the online recursion over the data and price the final iterate.

    The filtering stream and the final fixed-parameter likelihood evaluation
    use separate seeds derived from ``seed``.  The final iterate is taken as
    the parameter estimate; ``loglik_hat`` is a fresh particle log-likelihood
    at that estimate.  On filter degeneracy the partial trace is flushed
    before the error propagates.
    """
    ys = np.asarray(observations, dtype=float)
    if ys.size < 2:
        raise ValueError("need at least 2 observations")
    rng = make_rng(derive_seed(seed, 0))
    eval_seed = derive_seed(seed, 1)

    writer = _TraceWriter(trace_path, model.param_names) if trace_path else None
    state = OnlineFitState.initial(model, schedule, init_theta)
    try:
        for y in ys:
            state = online_gradient_step(
                state, y, model, rng, n_particles, resample_threshold
            )
            if writer:
                writer.append(state.trace[-1])
    except DegenerateFilterError:
        if writer:
            writer.close()
        raise
    if writer:
        writer.close()

    theta_hat = state.theta
    loglik_hat = run_filter(
        model, theta_hat, ys, n_particles, eval_seed, resample_threshold=resample_threshold
    ).loglik
    return FitReport(
        theta_hat,
        float(loglik_hat),
        n_particles,
        len(ys),
        seed,
        eval_seed,
        None if trace_path is None else str(trace_path),
    )


class _TraceWriter:
    """Incremental `k,<params...>` CSV writer, flushed every 1000 rows."""

    def __init__(self, path, param_names):
        self._fh = open(path, "w")
        self._fh.write("k," + ",".join(param_names) + "\n")
        self._since_flush = 0

    def append(self, row):
        k, *params = row
        self._fh.write("%d," % k + ",".join("%.17g" % p for p in params) + "\n")
        self._since_flush += 1
        if self._since_flush >= 1000:
            self._fh.flush()
            self._since_flush = 0

    def close(self):
        self._fh.close()
