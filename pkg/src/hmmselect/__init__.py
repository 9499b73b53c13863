"""Particle-filter maximum likelihood and information-criterion model
selection for hidden Markov models, with an exact linear-Gaussian oracle."""

from .criteria import (
    ComparisonResult,
    IcResult,
    PenaltyFn,
    aic,
    bic,
    classify_penalty,
    compare_models,
    default_prior_log_density,
    generalized_ic,
    laplace_log_evidence,
    make_ic_result,
    select,
)
from .errors import (
    DegenerateFilterError,
    EvidenceUnavailableError,
    ParameterError,
    PenaltyClassificationError,
)
from .fit import FitReport, StepSchedule, default_init_theta, fit_online, step_size
from .harness import (
    ExperimentConfig,
    ReplicationRecord,
    run_path_study,
    run_replication_study,
)
from .kalman import kalman_loglik, kalman_loglik_and_score, kalman_mle, kalman_score
from .models import (
    HmmModel,
    LinearGaussianModel,
    SvjModel,
    SvModel,
    Theta,
    Trajectory,
    eval_observation,
    eval_transition,
    get_model,
    simulate,
    to_natural,
    to_unconstrained,
)
from .seeding import derive_seed, make_rng, splitmix64
from .smc import FilterOutput, ParticleState, bootstrap_step, ess, resample, run_filter, score_step

__version__ = "0.1.0"
