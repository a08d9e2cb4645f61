"""Delayed-sampling inference runtime.

Lazy random-variable graphs with analytic linear-Gaussian chains, a
checkpointed state-space-model API, importance sampling and particle
filtering, and a multiple-object-tracking model built on all of it.
"""

from .dists import (
    BernoulliDist,
    CategoricalDist,
    Gaussian1D,
    GaussianND,
    PoissonDist,
    UniformBox,
    log_pdf,
    log_rising_factorial,
    log_sum_exp,
    normalize_log_weights,
    poisson_cdf,
    poisson_pmf,
    sample,
)
from .graph import (
    AffineExpr,
    GraphArena,
    GraphError,
    LazyGaussian,
    NodeRef,
    NodeState,
    Normal,
    UnsupportedFormError,
    condition_backward,
    marginalize_forward,
)
from .inference import (
    EvidenceEstimate,
    FilterResult,
    ParticleDegeneracyError,
    ParticleSystem,
    PosteriorSample,
    ess,
    importance_sample,
    particle_filter,
    particle_stream,
    systematic_resample,
)
from .model import (
    Checkpoint,
    Done,
    ExecutionContext,
    LogWeight,
    Model,
    ModelExecution,
    ObservationSchedule,
    Random,
    SSMExecution,
    StateSpaceModel,
    run_ssm,
)
from .mot import (
    GlobalParams,
    MultiObjectModel,
    MultiState,
    Track,
    associate,
    default_params,
    survival_prob,
)
from .ssm import (
    KalmanOracle,
    LinearGaussianProgram,
    LinearGaussianSSMSpec,
    NonlinearProgram,
    NonlinearSSMSpec,
    kalman_filter,
    run_example,
    simulate_lgssm,
)

__version__ = "0.1.0"
