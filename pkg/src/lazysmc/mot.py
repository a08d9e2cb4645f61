"""Multiple object tracking: birth/death dynamics, detection, association.

Each object follows its own six-dimensional (position, velocity,
acceleration) linear-Gaussian chain, kept marginalized in the delayed graph
so that within every particle of the outer filter a Kalman filter runs per
track. The outer model handles appearance (Poisson births), disappearance
(a discrete hazard derived from a Poisson lifetime), detection, clutter,
and the data-association proposal that matches detected tracks to
observations in proportion to their predictive densities.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dists import (
    BernoulliDist,
    Gaussian1D,
    GaussianND,
    PoissonDist,
    UniformBox,
    log_rising_factorial,
    poisson_cdf,
    poisson_pmf,
)
from .graph import NodeRef, Normal
from .model import StateSpaceModel

__all__ = [
    "GlobalParams",
    "default_params",
    "survival_prob",
    "Track",
    "MultiState",
    "MultiObjectModel",
    "associate",
]

_PDF_FLOOR = 1e-300  # predictive densities below this count as zero in q


@dataclass(frozen=True)
class GlobalParams:
    """Fixed parameters of the tracking model.

    ``d`` is the detection probability, ``lam`` the birth rate, ``mu`` the
    clutter rate (the clutter count is 1 + Poisson(mu)), and ``tau`` the
    Poisson track-length rate driving the survival hazard.
    """

    l: np.ndarray
    u: np.ndarray
    d: float
    M: np.ndarray
    A: np.ndarray
    Q: np.ndarray
    B: np.ndarray
    R: np.ndarray
    lam: float
    mu: float
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "l", np.asarray(self.l, dtype=float))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        for name in ("M", "A", "Q", "B", "R"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not np.all(self.l < self.u):
            raise ValueError("need l < u componentwise")
        if not 0.0 <= self.d <= 1.0:
            raise ValueError("detection probability must be in [0, 1]")
        for name in ("lam", "mu", "tau"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        n = self.M.shape[0]
        if self.A.shape != (n, n) or self.Q.shape != (n, n):
            raise ValueError("M, A, Q must share one square shape")
        m = self.B.shape[0]
        if self.B.shape != (m, n) or self.R.shape != (m, m):
            raise ValueError("B and R are inconsistent with the state dimension")

    def __deepcopy__(self, memo):
        return self  # immutable; shared across particle clones

    def to_dict(self) -> dict:
        return {
            "l": self.l.tolist(), "u": self.u.tolist(), "d": self.d,
            "M": self.M.tolist(), "A": self.A.tolist(), "Q": self.Q.tolist(),
            "B": self.B.tolist(), "R": self.R.tolist(),
            "lam": self.lam, "mu": self.mu, "tau": self.tau,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GlobalParams":
        return cls(**{k: data[k] for k in (
            "l", "u", "d", "M", "A", "Q", "B", "R", "lam", "mu", "tau")})


def default_params(d: float = 0.9, lam: float = 0.5, mu: float = 2.0,
                   tau: float = 10.0) -> GlobalParams:
    """Constant-acceleration model on the [-10, 10]^2 domain.

    The matrices are the standard position/velocity/acceleration blocks;
    d, lam, mu, tau have no published values and these defaults are ours.
    """
    eye2 = np.eye(2)
    zero2 = np.zeros((2, 2))
    m_init = np.block([
        [5.0 * eye2, zero2, zero2],
        [zero2, 0.1 * eye2, zero2],
        [zero2, zero2, 0.01 * eye2],
    ])
    a_trans = np.block([
        [eye2, eye2, 0.5 * eye2],
        [zero2, eye2, eye2],
        [zero2, zero2, eye2],
    ])
    q_noise = np.block([
        [zero2, zero2, zero2],
        [zero2, zero2, zero2],
        [zero2, zero2, 0.01 * eye2],
    ])
    b_obs = np.hstack([eye2, zero2, zero2])
    return GlobalParams(
        l=np.array([-10.0, -10.0]), u=np.array([10.0, 10.0]), d=d,
        M=m_init, A=a_trans, Q=q_noise, B=b_obs, R=0.1 * eye2,
        lam=lam, mu=mu, tau=tau)


@lru_cache(maxsize=8192)
def survival_prob(age: int, tau: float) -> float:
    """Probability that a track of the given age survives the next step.

    The hazard of disappearing is P[S = age] / P[S >= age] for a Poisson(tau)
    lifetime; survival is its complement. Ages beyond all support mass
    survive with probability zero by convention.
    """
    if age < 0:
        raise ValueError(f"age must be nonnegative, got {age}")
    hazard_num = poisson_pmf(age, tau)
    hazard_den = 1.0 - poisson_cdf(age, tau) + hazard_num  # P[S >= age]
    if hazard_den <= 0.0:
        return 0.0
    return min(1.0, max(0.0, 1.0 - hazard_num / hazard_den))


class Track:
    """One object's linear-Gaussian chain plus detection bookkeeping.

    ``x_refs`` holds the state node of every step since birth (all kept
    marginalized during filtering); ``y_ref`` is the current step's pending
    observation node, present only if the object was detected this step.
    ``assoc`` records, per step since birth, the index of the observation
    taken (None when undetected or when association failed).
    """

    __slots__ = ("birth_time", "x_refs", "y_ref", "assoc", "alive")

    def __init__(self, birth_time: int):
        self.birth_time = birth_time
        self.x_refs = []
        self.y_ref = None
        self.assoc = []
        self.alive = True

    def start(self, ctx, params: GlobalParams) -> None:
        mu0 = np.zeros(params.M.shape[0])
        mu0[:2] = ctx.draw(UniformBox(params.l, params.u))
        self.x_refs.append(ctx.assume(GaussianND(mu0, params.M)))

    def step(self, ctx, params: GlobalParams) -> None:
        self.x_refs.append(ctx.assume(Normal(params.A @ self.x_refs[-1], params.Q)))

    def observation_phase(self, ctx, params: GlobalParams) -> bool:
        detected = ctx.draw(BernoulliDist(params.d))
        if detected:
            self.y_ref = ctx.assume(Normal(params.B @ self.x_refs[-1], params.R))
        else:
            self.y_ref = None
            self.assoc.append(None)
        return detected

    def pending_observation(self) -> bool:
        return self.y_ref is not None

    def predictive_obs_pdf(self, value) -> float:
        return self.y_ref.predictive_pdf(value)

    def predictive_marginal(self):
        """Graft the pending observation node and return its marginal."""
        self.y_ref.arena.graft(self.y_ref.nid)
        return self.y_ref.marginal

    def accept_observation(self, ctx, value, index: int) -> None:
        ctx.add_log_weight(self.y_ref.observe(value))
        self.assoc.append(index)
        self.y_ref = None

    def fail_observation(self) -> None:
        self.assoc.append(None)
        self.y_ref = None

    def simulate_observation(self, ctx, index: int):
        value = self.y_ref.value()
        self.assoc.append(index)
        self.y_ref = None
        return value

    def __deepcopy__(self, memo):
        dup = object.__new__(Track)
        memo[id(self)] = dup
        dup.birth_time = self.birth_time
        if self.x_refs:
            arena = copy.deepcopy(self.x_refs[0].arena, memo)
            dup.x_refs = [NodeRef(arena, r.nid) for r in self.x_refs]
            dup.y_ref = NodeRef(arena, self.y_ref.nid) if self.y_ref is not None else None
        else:
            dup.x_refs = []
            dup.y_ref = None
        dup.assoc = list(self.assoc)
        dup.alive = self.alive
        return dup


class MultiState:
    """Ordered collection of live tracks at the current time."""

    __slots__ = ("tracks", "time")

    def __init__(self, tracks: list[Track], time: int):
        self.tracks = tracks
        self.time = time

    def __deepcopy__(self, memo):
        return MultiState([copy.deepcopy(t, memo) for t in self.tracks], self.time)


_LOG_2PI = math.log(2.0 * math.pi)


def _marginal_pdfs(marginal, obs_matrix: np.ndarray) -> np.ndarray:
    """Density of each observation row under a Gaussian marginal, floored."""
    if isinstance(marginal, Gaussian1D):
        z = (obs_matrix[:, 0] - marginal.mean)
        log_q = -0.5 * (_LOG_2PI + math.log(marginal.var) + z * z / marginal.var)
    elif marginal.dim == 2:
        cov = marginal.cov
        a, b = cov[0, 0], cov[0, 1]
        c, d = cov[1, 0], cov[1, 1]
        det = a * d - b * c
        dx = obs_matrix[:, 0] - marginal.mean[0]
        dy = obs_matrix[:, 1] - marginal.mean[1]
        quad = (d * dx * dx - (b + c) * dx * dy + a * dy * dy) / det
        log_q = -0.5 * (2.0 * _LOG_2PI + math.log(det) + quad)
    else:
        chol = marginal.chol()
        z = np.linalg.solve(chol, (obs_matrix - marginal.mean).T)
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        quad = np.einsum("ij,ij->j", z, z)
        log_q = -0.5 * (marginal.dim * _LOG_2PI + log_det + quad)
    q = np.exp(log_q)
    q[q < _PDF_FLOOR] = 0.0
    return q


def associate(ctx, observations, tracks, params: GlobalParams) -> list[int | None]:
    """Match detected tracks to observations; leftovers are clutter.

    Detected tracks are visited in order. Each proposes an observation from
    the remaining pool in proportion to its predictive density, takes it
    (emitting the log predictive weight), and emits the proposal correction
    -log q. A track whose candidate densities all vanish gets weight -inf.
    After the loop one prior correction -log_rising_factorial(M+1, K) is
    emitted (M the original observation count, K the detected count),
    followed by the clutter terms: the count left over, minus one, under
    Poisson(mu), and each leftover point under the uniform box.
    """
    m_original = len(observations)
    obs_matrix = np.asarray(observations, dtype=float)
    if obs_matrix.ndim == 1:
        obs_matrix = obs_matrix[:, None]
    remaining = list(range(m_original))
    k_detected = 0
    assignment: list[int | None] = []
    rng = ctx.rng
    for track in tracks:
        if not track.pending_observation():
            assignment.append(None)
            continue
        k_detected += 1
        q = _marginal_pdfs(track.predictive_marginal(), obs_matrix[remaining])
        total = float(q.sum())
        if total <= 0.0:
            ctx.add_log_weight(-math.inf)
            track.fail_observation()
            assignment.append(None)
            continue
        q /= total
        assert abs(q.sum() - 1.0) <= 1e-12
        pos = min(int(np.searchsorted(np.cumsum(q), rng.random(), side="right")),
                  len(q) - 1)
        j = remaining.pop(pos)
        track.accept_observation(ctx, observations[j], j)
        ctx.add_log_weight(-math.log(q[pos]))
        assignment.append(j)
    ctx.add_log_weight(-log_rising_factorial(m_original + 1, k_detected))
    ctx.factor(len(remaining) - 1, PoissonDist(params.mu))
    box = UniformBox(params.l, params.u)
    for j in remaining:
        ctx.factor(observations[j], box)
    return assignment


class MultiObjectModel(StateSpaceModel):
    """The tracking model as a state-space program.

    The latent state is the list of live tracks; transitions apply the
    survival hazard and Poisson births, observations draw detection flags
    and then either associate given data or simulate observations and
    clutter. All tracks ever born are retained for posterior extraction.
    """

    def __init__(self, params: GlobalParams):
        self.params = params
        self.all_tracks: list[Track] = []
        self.sim_observations: list[list[np.ndarray]] = []

    def parameter(self, ctx):
        return self.params

    def initial(self, ctx, params):
        return self._advance(ctx, MultiState([], 0))

    def transition(self, ctx, state, params, t):
        return self._advance(ctx, state)

    def _advance(self, ctx, state: MultiState) -> MultiState:
        params = self.params
        t = state.time + 1
        tracks: list[Track] = []
        for track in state.tracks:
            age = t - track.birth_time - 1
            if ctx.draw(BernoulliDist(survival_prob(age, params.tau))):
                track.step(ctx, params)
                tracks.append(track)
            else:
                track.alive = False
        births = ctx.draw(PoissonDist(params.lam))
        for _ in range(births):
            track = Track(t)
            track.start(ctx, params)
            tracks.append(track)
            self.all_tracks.append(track)
        return MultiState(tracks, t)

    def observation(self, ctx, state, params, t, given):
        for track in state.tracks:
            track.observation_phase(ctx, self.params)
        if given is None or len(given) == 0:
            self.sim_observations.append(self._simulate_observations(ctx, state))
        else:
            associate(ctx, given, state.tracks, self.params)

    def _simulate_observations(self, ctx, state: MultiState) -> list[np.ndarray]:
        params = self.params
        observations: list[np.ndarray] = []
        for track in state.tracks:
            if track.pending_observation():
                observations.append(track.simulate_observation(ctx, len(observations)))
        clutter_count = ctx.draw(PoissonDist(params.mu)) + 1
        box = UniformBox(params.l, params.u)
        for _ in range(clutter_count):
            observations.append(ctx.draw(box))
        return observations

    def __deepcopy__(self, memo):
        dup = object.__new__(MultiObjectModel)
        memo[id(self)] = dup
        dup.params = self.params
        dup.all_tracks = [copy.deepcopy(t, memo) for t in self.all_tracks]
        dup.sim_observations = list(self.sim_observations)
        return dup

    def extract(self, ctx):
        """Realize every track's chain (newest first) and report the paths."""
        records = []
        for track in self.all_tracks:
            positions = []
            for ref in reversed(track.x_refs):
                ref.value()
            for ref in track.x_refs:
                positions.append([float(v) for v in ref.stored_value[:2]])
            records.append({
                "birth": track.birth_time,
                "positions": positions,
                "obs_index": list(track.assoc),
            })
        return {"tracks": records}
