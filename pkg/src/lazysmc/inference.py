"""Importance sampling and a particle filter over checkpointed executions.

The filter advances every particle to its next checkpoint, accumulates the
evidence increment log mean weight at every checkpoint, and resamples
(systematically, cloning executions) when the effective sample size drops
below ``resample_threshold * N``. Weights are zeroed only at resamples, so
the evidence estimator stays unbiased under adaptive resampling and
``resample_threshold=0`` reduces the filter to plain importance sampling,
bit for bit.

Determinism: every random stream is keyed by the master seed plus its role
(particle slot at the start, resample step for the resampling uniform, a
dedicated stream for the final selection), never by thread identity, so
results are independent of the worker count. Each particle owns its
generator and is the only thing that advances it; duplicated ancestors at a
resample get slot-keyed jumps of the ancestor stream.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dists import log_sum_exp, normalize_log_weights

__all__ = [
    "ParticleDegeneracyError",
    "EvidenceEstimate",
    "PosteriorSample",
    "ParticleSystem",
    "FilterResult",
    "ess",
    "systematic_resample",
    "particle_filter",
    "importance_sample",
    "particle_stream",
]

_PARTICLE, _RESAMPLE, _SELECT = 0, 1, 2


class ParticleDegeneracyError(RuntimeError):
    """All particle weights hit -inf; carries the offending time step."""

    def __init__(self, step: int):
        super().__init__(f"all particle weights are -inf at time step {step}")
        self.step = step


@dataclass
class EvidenceEstimate:
    """Log normalizing constant and its per-checkpoint increments."""

    log_z: float
    per_step_log_increments: list[float]


@dataclass
class PosteriorSample:
    """One realized execution trace, drawn in proportion to final weights."""

    payload: object
    log_z: float
    particle_index: int


@dataclass
class ParticleSystem:
    """The filter's mutable state, exposed on results for inspection."""

    particles: list
    log_weights: np.ndarray
    ancestors: list[tuple[int, np.ndarray]] = field(default_factory=list)
    log_evidence: float = 0.0


@dataclass
class FilterResult:
    evidence: EvidenceEstimate
    posterior: PosteriorSample | None
    ess_trace: list[float]
    system: ParticleSystem


def particle_stream(seed: int, *key: int) -> np.random.Generator:
    """Deterministic generator keyed by (seed, role...); thread-agnostic."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def ess(log_weights) -> float:
    """Effective sample size (sum w)^2 / sum w^2, computed in log space."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0:
        raise ValueError("ess of empty weight vector")
    total = log_sum_exp(lw)
    if total == -math.inf:
        raise ValueError("ess undefined: all weights are zero")
    return math.exp(2.0 * total - log_sum_exp(2.0 * lw))


def systematic_resample(probs, u: float | None = None,
                        rng: np.random.Generator | None = None) -> np.ndarray:
    """Ancestor indices from one uniform draw; output sorted ascending.

    Offspring counts are within +-1 of N*p_i. ``probs`` must already be
    normalized; ``u`` may be supplied directly (tests) or drawn from ``rng``.
    """
    probs = np.asarray(probs, dtype=float)
    n = probs.size
    if u is None:
        if rng is None:
            raise ValueError("need either u or rng")
        u = float(rng.random())
    positions = (u + np.arange(n)) / n
    cum = np.cumsum(probs)
    idx = np.searchsorted(cum, positions, side="right")
    return np.minimum(idx, n - 1)  # guard the float shortfall of cum[-1]


def _advance_all(particles, pool):
    if pool is None:
        return [p.advance_to_checkpoint() for p in particles]
    return list(pool.map(lambda p: p.advance_to_checkpoint(), particles))


def _clone_generation(old, ancestors, seed, step):
    """Next particle generation: originals where possible, clones elsewhere.

    Duplicated ancestors are cloned; each clone recycles a dying particle's
    generator, transplanted with fresh state keyed by (seed, resample step,
    clone index). Streams therefore never depend on thread identity, and
    duplicates diverge deterministically.
    """
    selected = {int(a) for a in ancestors}
    dead_rngs = [p.rng for i, p in enumerate(old) if i not in selected]
    if dead_rngs:
        words = np.random.SeedSequence(
            entropy=(seed & 0xFFFFFFFFFFFFFFFF, step)
        ).generate_state(4 * len(dead_rngs), np.uint64)
    fresh = []
    reused: set[int] = set()
    k = 0
    for a in ancestors:
        a = int(a)
        if a in reused:
            gen = dead_rngs[k]
            base = 4 * k
            gen.bit_generator.state = {
                "bit_generator": "PCG64",
                "state": {
                    "state": (int(words[base]) << 64) | int(words[base + 1]),
                    "inc": ((int(words[base + 2]) << 64) | int(words[base + 3])) | 1,
                },
                "has_uint32": 0,
                "uinteger": 0,
            }
            k += 1
            fresh.append(old[a].clone(rng=gen))
        else:
            fresh.append(old[a])
            reused.add(a)
    return fresh


def _run_filter(model_factory, schedule, n_particles, resample_threshold,
                seed, threads, degeneracy_raises):
    particles = [model_factory(schedule, particle_stream(seed, _PARTICLE, i))
                 for i in range(n_particles)]
    system = ParticleSystem(particles, np.zeros(n_particles))
    log_n = math.log(n_particles)
    accumulated = 0.0
    prev_log_z = 0.0
    increments: list[float] = []
    ess_trace: list[float] = []
    step = 0
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        while True:
            step += 1
            outcomes = _advance_all(system.particles, pool)
            deltas = np.fromiter((o[0] for o in outcomes), dtype=float,
                                 count=n_particles)
            dones = [o[1] for o in outcomes]
            system.log_weights = system.log_weights + deltas
            total = log_sum_exp(system.log_weights)
            if total == -math.inf:
                if degeneracy_raises:
                    raise ParticleDegeneracyError(step)
                warnings.warn(f"degenerate weights: all -inf at step {step}")
                system.log_evidence = -math.inf
                increments.append(-math.inf)
                ess_trace.append(float("nan"))
                if all(dones):
                    break
                continue
            current_log_z = accumulated + total - log_n
            increments.append(current_log_z - prev_log_z)
            prev_log_z = current_log_z
            system.log_evidence = current_log_z
            step_ess = ess(system.log_weights)
            ess_trace.append(step_ess)
            if all(dones):
                break
            if any(dones):
                raise RuntimeError(
                    f"misaligned checkpoints: some particles finished at step {step}")
            if resample_threshold > 0.0 and step_ess < resample_threshold * n_particles:
                probs, _ = normalize_log_weights(system.log_weights)
                u = float(particle_stream(seed, _RESAMPLE, step).random())
                ancestors = systematic_resample(probs, u)
                system.ancestors.append((step, ancestors))
                system.particles = _clone_generation(
                    system.particles, ancestors, seed, step)
                accumulated = current_log_z
                system.log_weights = np.zeros(n_particles)
    finally:
        if pool is not None:
            pool.shutdown()
    return system, increments, ess_trace


def particle_filter(model_factory, schedule, n_particles: int,
                    resample_threshold: float = 0.5, seed: int = 0,
                    threads: int = 1, collect_posterior: bool = True) -> FilterResult:
    """Run a particle filter; returns evidence, a posterior draw, and ESS trace.

    ``model_factory(schedule, rng)`` must build a fresh execution. The
    posterior sample is one particle drawn proportionally to the final
    weights, with its model-defined payload extracted (which realizes any
    still-marginalized latents in that particle only).
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    if not 0.0 <= resample_threshold <= 1.0:
        raise ValueError("resample_threshold must be in [0, 1]")
    system, increments, ess_trace = _run_filter(
        model_factory, schedule, n_particles, resample_threshold, seed,
        threads, degeneracy_raises=True)
    posterior = None
    if collect_posterior:
        probs, _ = normalize_log_weights(system.log_weights)
        u = float(particle_stream(seed, _SELECT).random())
        pick = min(int(np.searchsorted(np.cumsum(probs), u, side="right")),
                   len(probs) - 1)
        payload = system.particles[pick].extract()
        posterior = PosteriorSample(payload, system.log_evidence, pick)
    evidence = EvidenceEstimate(system.log_evidence, increments)
    return FilterResult(evidence, posterior, ess_trace, system)


def importance_sample(model_factory, schedule, n_samples: int, seed: int = 0,
                      threads: int = 1):
    """Importance sampling from the prior: (payloads, log_weights, log_z).

    Each sample is a full prior simulation; its weight is the sum of its
    observation log densities. Degenerate weights (all -inf) give
    log_z = -inf with a warning rather than an error.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    system, _, _ = _run_filter(model_factory, schedule, n_samples, 0.0,
                               seed, threads, degeneracy_raises=False)
    payloads = [p.extract() for p in system.particles]
    return payloads, system.log_weights, system.log_evidence
