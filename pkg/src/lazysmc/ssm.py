"""Reference state-space models and a standalone Kalman filter oracle.

The scalar linear-Gaussian model here is the workhorse of the test suite:
its exact log likelihood and filtered moments come from the textbook
predict/update recursion, against which the delayed-sampling machinery must
agree to floating-point accuracy. A nonlinear variant with pluggable f/g
exercises the pruning fallback.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dists import Gaussian1D, UniformBox
from .inference import particle_filter
from .model import ObservationSchedule, Random, StateSpaceModel, run_ssm
from .graph import Normal

__all__ = [
    "LinearGaussianSSMSpec",
    "NonlinearSSMSpec",
    "KalmanOracle",
    "simulate_lgssm",
    "kalman_filter",
    "LinearGaussianProgram",
    "NonlinearProgram",
    "run_example",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LinearGaussianSSMSpec:
    """x_t = theta * x_{t-1} + N(0, trans_var); y_t = obs_coeff * x_t + N(0, obs_var).

    ``theta=None`` means the coefficient is itself random, uniform on [0, 1];
    all the exact-equivalence machinery requires a fixed theta.
    """

    theta: float | None = 0.8
    init_mean: float = 0.0
    init_var: float = 1.0
    trans_var: float = 1.0
    obs_var: float = 0.1
    obs_coeff: float = 1.0
    T: int = 10

    def __post_init__(self):
        for name in ("init_var", "trans_var", "obs_var"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.T < 1:
            raise ValueError("need T >= 1")

    def fixed(self, theta: float) -> "LinearGaussianSSMSpec":
        return replace(self, theta=theta)


@dataclass(frozen=True)
class NonlinearSSMSpec:
    """Same noise structure with opaque transition/observation functions."""

    f: object  # (x, theta) -> transition mean
    g: object  # (x, theta) -> observation mean
    theta: float | None = 0.8
    init_mean: float = 0.0
    init_var: float = 1.0
    trans_var: float = 1.0
    obs_var: float = 0.1
    T: int = 10


def simulate_lgssm(spec: LinearGaussianSSMSpec, rng: np.random.Generator):
    """Exact forward draw: (theta, x_{1:T}, y_{1:T})."""
    theta = spec.theta if spec.theta is not None else float(rng.uniform(0.0, 1.0))
    xs = np.empty(spec.T)
    ys = np.empty(spec.T)
    x = spec.init_mean + math.sqrt(spec.init_var) * rng.standard_normal()
    for t in range(spec.T):
        if t > 0:
            x = theta * x + math.sqrt(spec.trans_var) * rng.standard_normal()
        xs[t] = x
        ys[t] = spec.obs_coeff * x + math.sqrt(spec.obs_var) * rng.standard_normal()
    return theta, xs, ys


@dataclass
class KalmanOracle:
    """Filtered/predicted moments and the exact log likelihood."""

    predicted_means: list[float] = field(default_factory=list)
    predicted_vars: list[float] = field(default_factory=list)
    filtered_means: list[float] = field(default_factory=list)
    filtered_vars: list[float] = field(default_factory=list)
    step_log_liks: list[float] = field(default_factory=list)
    log_lik: float = 0.0


def kalman_filter(spec: LinearGaussianSSMSpec, ys,
                  init_filtered: tuple[float, float] | None = None) -> KalmanOracle:
    """Predict/update recursion for the scalar linear-Gaussian model.

    With ``init_filtered`` the recursion continues from a carried filtered
    state (a predict step is applied before the first observation), so
    chaining split datasets reproduces the one-shot run exactly.
    """
    if spec.theta is None:
        raise ValueError("kalman_filter requires a fixed theta")
    if len(ys) == 0:
        raise ValueError("empty observation sequence")
    theta, c = spec.theta, spec.obs_coeff
    oracle = KalmanOracle()
    if init_filtered is None:
        m, v = spec.init_mean, spec.init_var
        carried = False
    else:
        m, v = init_filtered
        carried = True
    for t, y in enumerate(np.asarray(ys, dtype=float)):
        if t > 0 or carried:
            m = theta * m
            v = theta * theta * v + spec.trans_var
        oracle.predicted_means.append(m)
        oracle.predicted_vars.append(v)
        s = c * c * v + spec.obs_var
        resid = y - c * m
        step_ll = -0.5 * (_LOG_2PI + math.log(s) + resid * resid / s)
        oracle.step_log_liks.append(step_ll)
        gain = c * v / s
        m = m + gain * resid
        v = v * spec.obs_var / s
        oracle.filtered_means.append(m)
        oracle.filtered_vars.append(v)
    oracle.log_lik = math.fsum(oracle.step_log_liks)
    return oracle


class LinearGaussianProgram(StateSpaceModel):
    """Graph-backed implementation of the linear-Gaussian model.

    In delayed mode the states stay marginalized and every observation
    weight is the exact predictive density (the Rao-Blackwellized limit);
    in eager mode states are simulated forward and weights are plain
    likelihood evaluations (the bootstrap proposal).
    """

    def __init__(self, spec: LinearGaussianSSMSpec, mode: str = "delayed",
                 track_path: bool = True):
        if mode not in ("delayed", "eager"):
            raise ValueError(f"unknown mode {mode!r}")
        self.spec = spec
        self.mode = mode
        self.track_path = track_path  # False: evidence only, no trajectory kept
        self.theta = None
        self.states = []       # NodeRefs (delayed) or floats (eager)
        self.obs_refs = []     # delayed-mode observation nodes
        self.sim_obs = []      # eager-mode draws for unobserved steps

    def parameter(self, ctx):
        if self.spec.theta is not None:
            self.theta = self.spec.theta
        else:
            self.theta = float(ctx.draw(UniformBox([0.0], [1.0]))[0])
        return self.theta

    def initial(self, ctx, params):
        spec = self.spec
        if self.mode == "delayed":
            x = ctx.assume(Normal(spec.init_mean, spec.init_var))
        else:
            x = ctx.draw(Gaussian1D(spec.init_mean, spec.init_var))
        if self.track_path:
            self.states.append(x)
        return x

    def transition(self, ctx, state, params, t):
        spec = self.spec
        if self.mode == "delayed":
            x = ctx.assume(Normal(self.theta * state, spec.trans_var))
        else:
            x = ctx.draw(Gaussian1D(self.theta * state, spec.trans_var))
        if self.track_path:
            self.states.append(x)
        return x

    def observation(self, ctx, state, params, t, given):
        spec = self.spec
        if self.mode == "delayed":
            slot = Random(given) if given is not None else Random()
            self.obs_refs.append(
                ctx.tilde(slot, Normal(spec.obs_coeff * state, spec.obs_var)))
        else:
            dist = Gaussian1D(spec.obs_coeff * state, spec.obs_var)
            if given is not None:
                ctx.factor(given, dist)
            else:
                self.sim_obs.append(ctx.draw(dist))

    def extract(self, ctx):
        if not self.track_path:
            return {"theta": self.theta, "x": None}
        if self.mode == "delayed":
            xs = [None] * len(self.states)
            for i in range(len(self.states) - 1, -1, -1):
                xs[i] = float(self.states[i].value())
        else:
            xs = [float(x) for x in self.states]
        return {"theta": self.theta, "x": xs}

    def filtered_moments(self):
        """Current (mean, var) marginals of the delayed state chain."""
        if self.mode != "delayed":
            raise RuntimeError("moments are only tracked in delayed mode")
        out = []
        for ref in self.states:
            marg = ref.marginal
            out.append((marg.mean, marg.var) if marg is not None else None)
        return out

    def __deepcopy__(self, memo):
        dup = object.__new__(LinearGaussianProgram)
        memo[id(self)] = dup
        dup.spec = self.spec
        dup.mode = self.mode
        dup.track_path = self.track_path
        dup.theta = self.theta
        if self.mode == "delayed":
            dup.states = [copy.deepcopy(r, memo) for r in self.states]
            dup.obs_refs = [copy.deepcopy(r, memo) for r in self.obs_refs]
        else:
            dup.states = list(self.states)
            dup.obs_refs = list(self.obs_refs)
        dup.sim_obs = list(self.sim_obs)
        return dup


class NonlinearProgram(StateSpaceModel):
    """SSM with opaque f/g; node values are forced at every nonlinearity."""

    def __init__(self, spec: NonlinearSSMSpec):
        self.spec = spec
        self.theta = None
        self.states = []
        self.sim_obs = []

    def parameter(self, ctx):
        if self.spec.theta is not None:
            self.theta = self.spec.theta
        else:
            self.theta = float(ctx.draw(UniformBox([0.0], [1.0]))[0])
        return self.theta

    def initial(self, ctx, params):
        x = ctx.assume(Normal(self.spec.init_mean, self.spec.init_var))
        self.states.append(x)
        return x

    def transition(self, ctx, state, params, t):
        mean = self.spec.f(ctx.value(state), self.theta)
        x = ctx.assume(Normal(float(mean), self.spec.trans_var))
        self.states.append(x)
        return x

    def observation(self, ctx, state, params, t, given):
        mean = float(self.spec.g(ctx.value(state), self.theta))
        dist = Gaussian1D(mean, self.spec.obs_var)
        if given is not None:
            ctx.factor(given, dist)
        else:
            self.sim_obs.append(ctx.draw(dist))

    def extract(self, ctx):
        return {"theta": self.theta,
                "x": [float(s.value()) for s in self.states]}

    def __deepcopy__(self, memo):
        dup = object.__new__(NonlinearProgram)
        memo[id(self)] = dup
        dup.spec = self.spec
        dup.theta = self.theta
        dup.states = [copy.deepcopy(r, memo) for r in self.states]
        dup.sim_obs = list(self.sim_obs)
        return dup


def run_example(spec, ys, mode: str = "delayed", n_particles: int = 1024,
                resample_threshold: float = 0.5, seed: int = 0,
                threads: int = 1):
    """Filter a dataset under the given spec; returns a report dict."""
    schedule = ObservationSchedule(list(np.asarray(ys, dtype=float)))
    if isinstance(spec, LinearGaussianSSMSpec):
        def factory(sched, rng):
            return run_ssm(LinearGaussianProgram(spec, mode), sched, spec.T, rng)
    elif isinstance(spec, NonlinearSSMSpec):
        def factory(sched, rng):
            return run_ssm(NonlinearProgram(spec), sched, spec.T, rng)
    else:
        raise TypeError(f"unknown spec type {type(spec).__name__}")
    result = particle_filter(factory, schedule, n_particles,
                             resample_threshold, seed, threads)
    return {
        "log_z": result.evidence.log_z,
        "increments": result.evidence.per_step_log_increments,
        "posterior": result.posterior.payload,
        "ess_trace": result.ess_trace,
    }
