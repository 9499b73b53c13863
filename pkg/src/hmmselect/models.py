"""Hidden Markov model definitions, parameter transforms and simulation.

Three scalar-state models are provided:

* ``sv`` — stochastic volatility:
    X_t = phi X_{t-1} + W_t,  W_t ~ N(0, sigma_x^2),  X_0 = 0
    Y_t = exp(X_t / 2) V_t,   V_t ~ N(0, 1)

* ``svj`` — stochastic volatility with Bernoulli-triggered jumps:
    Y_t = exp(X_t / 2) V_t + q_t J_t,  q_t ~ Bernoulli(p), J_t ~ N(0, sigma_j^2)
  marginally Y_t | X_t = x is the two-component mixture
    (1 - p) N(0, e^x) + p N(0, e^x + sigma_j^2).
  ``sv`` is ``svj`` with the trailing (sigma_j, p) block switched off, so the
  pair forms a nested family.

* ``lg`` — linear Gaussian (verification vehicle with an exact filter):
    X_t = phi X_{t-1} + W_t,  Y_t = X_t + sigma_v V_t,
  initialised from the stationary law N(0, sigma_x^2 / (1 - phi^2)).

Simulation consumes four uniform draws per time step, in the fixed order
(W_t, V_t, q_t, J_t), for every model; normals are produced from the uniforms
by the inverse CDF.  Because the layout never depends on parameter values,
nested models with deactivated components (e.g. ``svj`` at p = 0) produce
bit-identical observation paths under a common seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit, logit, ndtri

from .errors import ParameterError
from .seeding import make_rng

__all__ = [
    "Theta",
    "Trajectory",
    "HmmModel",
    "Ar1GaussianTransition",
    "SvModel",
    "SvjModel",
    "LinearGaussianModel",
    "get_model",
    "simulate",
    "eval_observation",
    "eval_transition",
    "to_unconstrained",
    "to_natural",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)

# transform kinds for single parameters: open interval (-1,1), (0,inf), (0,1)
_CORR, _POS, _PROB = "corr", "pos", "prob"


@dataclass(frozen=True, eq=False)
class Theta:
    """A parameter point in a model's native (natural) coordinates."""

    natural: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        arr = np.array(self.natural, dtype=float).reshape(-1)
        arr.flags.writeable = False
        object.__setattr__(self, "natural", arr)
        if arr.shape != (len(self.names),):
            raise ParameterError(
                f"expected {len(self.names)} parameters {self.names}, got {arr.shape}"
            )

    def __len__(self) -> int:
        return len(self.names)

    def __getitem__(self, i):
        return self.natural[i]

    def get(self, name: str) -> float:
        return float(self.natural[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in zip(self.names, self.natural)}

    def replace(self, **kw) -> "Theta":
        vals = dict(self.as_dict())
        vals.update(kw)
        return Theta(np.array([vals[k] for k in self.names]), self.names)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A simulated latent/observed path with its provenance."""

    states: np.ndarray
    observations: np.ndarray
    seed: int
    model_name: str
    theta: Theta

    def __post_init__(self):
        if len(self.states) != len(self.observations) or len(self.states) < 1:
            raise ValueError("states and observations must have equal length >= 1")

    def __len__(self) -> int:
        return len(self.observations)


class HmmModel:
    """Base class for scalar-state HMMs with componentwise parameter transforms.

    Subclasses define ``name``, ``param_names`` and ``_kinds`` (one transform
    kind per parameter) and implement the transition and observation kernels.
    Density methods broadcast over numpy arrays and never validate parameters
    (validation belongs to the callers that own a user-facing contract).
    """

    name: str = ""
    param_names: tuple[str, ...] = ()
    _kinds: tuple[str, ...] = ()

    @property
    def d(self) -> int:
        return len(self.param_names)

    def theta(self, *args, **kwargs) -> Theta:
        """Build a Theta from positional or named values; closure-validated."""
        if args and kwargs:
            raise TypeError("pass parameters positionally or by name, not both")
        if kwargs:
            missing = set(self.param_names) - set(kwargs)
            extra = set(kwargs) - set(self.param_names)
            if missing or extra:
                raise ParameterError(f"bad parameter names; missing={missing} extra={extra}")
            vals = np.array([float(kwargs[k]) for k in self.param_names])
        else:
            vals = np.array([float(a) for a in args])
        th = Theta(vals, self.param_names)
        self.validate(th, interior=False)
        return th

    # -- constraint handling ------------------------------------------------

    def validate(self, theta: Theta, interior: bool = True) -> None:
        """Raise ParameterError unless theta lies in the constraint set.

        With ``interior=True`` all inequalities are strict (transforms and
        fitting need this); otherwise the harmless boundary values sigma = 0
        and p in {0, 1} are admitted, which simulation supports.
        """
        v = theta.natural
        if v.shape != (self.d,) or not np.all(np.isfinite(v)):
            raise ParameterError(f"{self.name}: non-finite or wrong-size parameter vector")
        for name, kind, x in zip(self.param_names, self._kinds, v):
            if kind == _CORR and not abs(x) < 1.0:
                raise ParameterError(f"{self.name}: |{name}| must be < 1, got {x}")
            if kind == _POS and (x < 0.0 or (interior and x == 0.0)):
                raise ParameterError(f"{self.name}: {name} must be positive, got {x}")
            if kind == _PROB and not (0.0 <= x <= 1.0 and (not interior or 0.0 < x < 1.0)):
                raise ParameterError(f"{self.name}: {name} must lie in (0,1), got {x}")
        self._validate_extra(theta, interior)

    def _validate_extra(self, theta: Theta, interior: bool) -> None:
        pass

    def to_unconstrained(self, theta: Theta) -> np.ndarray:
        """Map natural parameters to R^d: atanh / log / logit componentwise."""
        self.validate(theta, interior=True)
        out = np.empty(self.d)
        for i, kind in enumerate(self._kinds):
            x = theta.natural[i]
            out[i] = np.arctanh(x) if kind == _CORR else (np.log(x) if kind == _POS else logit(x))
        return out

    def to_natural(self, v: np.ndarray) -> Theta:
        """Inverse of ``to_unconstrained``; always lands in the interior."""
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape != (self.d,):
            raise ParameterError(f"{self.name}: expected {self.d} unconstrained values")
        out = np.empty(self.d)
        for i, kind in enumerate(self._kinds):
            out[i] = np.tanh(v[i]) if kind == _CORR else (np.exp(v[i]) if kind == _POS else expit(v[i]))
        th = Theta(out, self.param_names)
        self.validate(th, interior=True)
        return th

    def transform_jacobian(self, theta: Theta) -> np.ndarray:
        """Diagonal of d(natural)/d(unconstrained) at theta."""
        jac = np.empty(self.d)
        for i, kind in enumerate(self._kinds):
            x = theta.natural[i]
            jac[i] = (1.0 - x * x) if kind == _CORR else (x if kind == _POS else x * (1.0 - x))
        return jac

    # -- transition kernel: subclass responsibility ----------------------------

    def ar1_params(self, theta: Theta):
        """(phi, sigma, phi index, sigma index) when the transition is AR(1)
        Gaussian, else None; hook for the compiled pairwise score kernel."""
        return None

    def log_q(self, theta: Theta, x_prev, x):
        raise NotImplementedError

    def grad_log_q(self, theta: Theta, x_prev, x) -> np.ndarray:
        raise NotImplementedError

    def sample_transition(self, theta: Theta, x_prev, rng: np.random.Generator):
        raise NotImplementedError

    # -- initial law ----------------------------------------------------------

    def sample_init(self, theta: Theta, rng: np.random.Generator, size: int):
        """Particles from the filter's initial law (point mass at 0 by default)."""
        return np.zeros(size)

    def grad_log_init(self, theta: Theta, x) -> np.ndarray:
        """Parameter gradient of the initial log-density; zero unless it moves with theta."""
        return np.zeros(np.shape(x) + (self.d,))

    # -- observation kernel: subclass responsibility ---------------------------

    def log_g(self, theta: Theta, y, x):
        raise NotImplementedError

    def grad_log_g(self, theta: Theta, y, x) -> np.ndarray:
        raise NotImplementedError

    def sample_observation(self, theta: Theta, x, rng: np.random.Generator):
        raise NotImplementedError

class Ar1GaussianTransition(HmmModel):
    """Shared AR(1) Gaussian transition x_t = phi x_{t-1} + N(0, sigma_x^2).

    Subclasses must expose parameters named ``phi`` and ``sigma_x`` and
    implement the observation side plus the simulation noise hooks.
    """

    def _ar1(self, theta: Theta) -> tuple[float, float]:
        return theta.get("phi"), theta.get("sigma_x")

    def ar1_params(self, theta: Theta):
        phi, sig = self._ar1(theta)
        return phi, sig, self.param_names.index("phi"), self.param_names.index("sigma_x")

    def log_q(self, theta: Theta, x_prev, x):
        phi, sig = self._ar1(theta)
        r = np.asarray(x) - phi * np.asarray(x_prev)
        return -_HALF_LOG_2PI - np.log(sig) - r * r / (2.0 * sig * sig)

    def grad_log_q(self, theta: Theta, x_prev, x) -> np.ndarray:
        phi, sig = self._ar1(theta)
        x_prev = np.asarray(x_prev, dtype=float)
        r = np.asarray(x, dtype=float) - phi * x_prev
        g = np.zeros(np.broadcast(r, x_prev).shape + (self.d,))
        g[..., self.param_names.index("phi")] = r * x_prev / (sig * sig)
        g[..., self.param_names.index("sigma_x")] = r * r / sig**3 - 1.0 / sig
        return g

    def sample_transition(self, theta: Theta, x_prev, rng: np.random.Generator):
        phi, sig = self._ar1(theta)
        return phi * np.asarray(x_prev) + sig * rng.standard_normal(np.shape(x_prev))

    # -- simulation -------------------------------------------------------------

    def _init_from_noise(self, theta: Theta, w0: float) -> float:
        return 0.0

    def _observe_from_noise(self, theta, x, v_noise, u_jump, j_noise):
        raise NotImplementedError

    def simulate(self, theta: Theta, n: int, seed: int) -> Trajectory:
        """Draw (x_{0:n-1}, y_{0:n-1}) under the fixed per-step uniform layout."""
        self.validate(theta, interior=False)
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = make_rng(seed)
        u = np.maximum(rng.random((n, 4)), 1e-300)  # guard ndtri(0) = -inf
        w = ndtri(u[:, 0])
        v = ndtri(u[:, 1])
        j = ndtri(u[:, 3])
        phi, sig = self._ar1(theta)
        # x_t = phi x_{t-1} + sig w_t driven as an IIR filter, x_0 from the init rule
        e = sig * w
        e[0] = self._init_from_noise(theta, w[0])
        x = lfilter([1.0], [1.0, -phi], e)
        y = self._observe_from_noise(theta, x, v, u[:, 2], j)
        return Trajectory(x, y, seed, self.name, theta)


class SvModel(Ar1GaussianTransition):
    """Stochastic volatility: Y_t | X_t = x ~ N(0, e^x), X_0 = 0."""

    name = "sv"
    param_names = ("phi", "sigma_x")
    _kinds = (_CORR, _POS)

    def log_g(self, theta: Theta, y, x):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return -_HALF_LOG_2PI - 0.5 * x - 0.5 * y * y * np.exp(-x)

    def grad_log_g(self, theta: Theta, y, x) -> np.ndarray:
        # density does not involve (phi, sigma_x)
        return np.zeros(np.broadcast(np.asarray(y), np.asarray(x)).shape + (self.d,))

    def sample_observation(self, theta: Theta, x, rng: np.random.Generator):
        return np.exp(np.asarray(x) / 2.0) * rng.standard_normal(np.shape(x))

    def _observe_from_noise(self, theta, x, v_noise, u_jump, j_noise):
        return np.exp(x / 2.0) * v_noise


class SvjModel(Ar1GaussianTransition):
    """SV with jumps: Y_t | X_t = x ~ (1-p) N(0, e^x) + p N(0, e^x + sigma_j^2)."""

    name = "svj"
    param_names = ("phi", "sigma_x", "sigma_j", "p")
    _kinds = (_CORR, _POS, _POS, _PROB)

    def _mixture_parts(self, theta: Theta, y, x):
        sj = theta.get("sigma_j")
        p = theta.get("p")
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        v0 = np.exp(x)
        v1 = v0 + sj * sj
        log_n0 = -_HALF_LOG_2PI - 0.5 * np.log(v0) - 0.5 * y * y / v0
        log_n1 = -_HALF_LOG_2PI - 0.5 * np.log(v1) - 0.5 * y * y / v1
        with np.errstate(divide="ignore"):
            log_mix = np.logaddexp(np.log1p(-p) + log_n0, np.log(p) + log_n1)
        return p, sj, y, v1, log_n0, log_n1, log_mix

    def log_g(self, theta: Theta, y, x):
        return self._mixture_parts(theta, y, x)[-1]

    def grad_log_g(self, theta: Theta, y, x) -> np.ndarray:
        p, sj, y, v1, log_n0, log_n1, log_mix = self._mixture_parts(theta, y, x)
        g = np.zeros(np.shape(log_mix) + (self.d,))
        g[..., 3] = np.exp(log_n1 - log_mix) - np.exp(log_n0 - log_mix)
        with np.errstate(divide="ignore"):
            r1 = np.exp(np.log(p) + log_n1 - log_mix)
        g[..., 2] = r1 * (y * y / (v1 * v1) - 1.0 / v1) * sj
        return g

    def sample_observation(self, theta: Theta, x, rng: np.random.Generator):
        sj = theta.get("sigma_j")
        p = theta.get("p")
        shape = np.shape(x)
        base = np.exp(np.asarray(x) / 2.0) * rng.standard_normal(shape)
        jumps = (rng.random(shape) < p) * (sj * rng.standard_normal(shape))
        return base + jumps

    def _observe_from_noise(self, theta, x, v_noise, u_jump, j_noise):
        sj = theta.get("sigma_j")
        p = theta.get("p")
        return np.exp(x / 2.0) * v_noise + (u_jump < p) * (sj * j_noise)


class LinearGaussianModel(Ar1GaussianTransition):
    """Linear Gaussian AR(1) with additive observation noise, stationary init."""

    name = "lg"
    param_names = ("phi", "sigma_x", "sigma_v")
    _kinds = (_CORR, _POS, _POS)

    def stationary_var(self, theta: Theta) -> float:
        phi, sig = self._ar1(theta)
        return sig * sig / (1.0 - phi * phi)

    def log_g(self, theta: Theta, y, x):
        sv = theta.get("sigma_v")
        r = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        return -_HALF_LOG_2PI - np.log(sv) - r * r / (2.0 * sv * sv)

    def grad_log_g(self, theta: Theta, y, x) -> np.ndarray:
        sv = theta.get("sigma_v")
        r = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        g = np.zeros(np.shape(r) + (self.d,))
        g[..., 2] = r * r / sv**3 - 1.0 / sv
        return g

    def sample_observation(self, theta: Theta, x, rng: np.random.Generator):
        return np.asarray(x) + theta.get("sigma_v") * rng.standard_normal(np.shape(x))

    def sample_init(self, theta: Theta, rng: np.random.Generator, size: int):
        return np.sqrt(self.stationary_var(theta)) * rng.standard_normal(size)

    def grad_log_init(self, theta: Theta, x) -> np.ndarray:
        # log N(x; 0, P0) with P0 = sigma_x^2 / (1 - phi^2) moving with theta
        phi, sig = self._ar1(theta)
        p0 = self.stationary_var(theta)
        x = np.asarray(x, dtype=float)
        factor = x * x / p0 - 1.0
        g = np.zeros(np.shape(x) + (self.d,))
        g[..., 0] = factor * phi / (1.0 - phi * phi)
        g[..., 1] = factor / sig
        return g

    def _init_from_noise(self, theta: Theta, w0: float) -> float:
        return float(np.sqrt(self.stationary_var(theta)) * w0)

    def _observe_from_noise(self, theta, x, v_noise, u_jump, j_noise):
        return x + theta.get("sigma_v") * v_noise


_MODELS = {m.name: m for m in (SvModel(), SvjModel(), LinearGaussianModel())}


def get_model(name: str) -> HmmModel:
    try:
        return _MODELS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; choose from {sorted(_MODELS)}") from None


# -- flat operation wrappers ------------------------------------------------


def simulate(model: HmmModel, theta: Theta, n: int, seed: int) -> Trajectory:
    return model.simulate(theta, n, seed)


def eval_observation(model: HmmModel, theta: Theta, y, x):
    """(log g(y|x), gradient w.r.t. parameters)."""
    model.validate(theta, interior=False)
    return model.log_g(theta, y, x), model.grad_log_g(theta, y, x)


def eval_transition(model: HmmModel, theta: Theta, x_prev, x):
    """(log q(x|x_prev), gradient w.r.t. parameters)."""
    model.validate(theta, interior=True)
    return model.log_q(theta, x_prev, x), model.grad_log_q(theta, x_prev, x)


def to_unconstrained(model: HmmModel, theta: Theta) -> np.ndarray:
    return model.to_unconstrained(theta)


def to_natural(model: HmmModel, v: np.ndarray) -> Theta:
    return model.to_natural(v)


# -- trajectory CSV ("t,x,y", full double precision) --------------------------


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w") as fh:
        fh.write("t,x,y\n")
        for t, (x, y) in enumerate(zip(traj.states, traj.observations)):
            fh.write("%d,%.17g,%.17g\n" % (t, x, y))


def read_trajectory_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return (states, observations) from a trajectory CSV."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1].copy(), data[:, 2].copy()
