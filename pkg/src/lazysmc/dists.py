"""Primitive probability distributions and the special functions the trackers need.

All distributions are immutable after construction and sample through an
explicitly injected ``numpy.random.Generator``; there is no global RNG
anywhere in the library. Densities are returned in log space, with ``-inf``
(not an exception) for out-of-support values.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Gaussian1D",
    "GaussianND",
    "UniformBox",
    "PoissonDist",
    "BernoulliDist",
    "CategoricalDist",
    "sample",
    "log_pdf",
    "poisson_pmf",
    "poisson_cdf",
    "log_rising_factorial",
    "log_sum_exp",
    "normalize_log_weights",
    "cholesky_psd",
]

_LOG_2PI = math.log(2.0 * math.pi)


def cholesky_psd(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a PSD matrix, with a single jitter retry.

    Rank-deficient covariances (e.g. process noise acting on one block only)
    fail the plain factorization; one shot of diagonal jitter scaled as
    1e-9 * trace/n makes them factorizable. A second failure is an error.
    """
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        n = cov.shape[0]
        jitter = 1e-9 * float(np.trace(cov)) / n
        if jitter <= 0.0:
            jitter = 1e-12
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                "covariance not PSD even after jitter"
            ) from exc


class Gaussian1D:
    """Scalar normal, parameterized by mean and VARIANCE (not standard deviation)."""

    __slots__ = ("mean", "var")

    def __init__(self, mean: float, var: float):
        if not var > 0.0:
            raise ValueError(f"variance must be positive, got {var}")
        self.mean = float(mean)
        self.var = float(var)

    def sample(self, rng: np.random.Generator) -> float:
        return self.mean + math.sqrt(self.var) * rng.standard_normal()

    def log_pdf(self, value: float) -> float:
        z = (value - self.mean)
        return -0.5 * (_LOG_2PI + math.log(self.var) + z * z / self.var)

    def __repr__(self):
        return f"Gaussian1D(mean={self.mean}, var={self.var})"


class GaussianND:
    """Multivariate normal with full covariance.

    The covariance must be symmetric PSD; sampling and density evaluation go
    through :func:`cholesky_psd` so that rank-deficient (but PSD) covariances
    still work.
    """

    __slots__ = ("mean", "cov", "_chol")

    def __init__(self, mean, cov):
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"shape mismatch: mean {mean.shape}, cov {cov.shape}")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("covariance must be symmetric")
        self.mean = mean
        self.cov = cov
        self._chol = None

    @classmethod
    def _unchecked(cls, mean: np.ndarray, cov: np.ndarray) -> "GaussianND":
        # internal fast path for covariances already known symmetric
        dist = object.__new__(cls)
        dist.mean = mean
        dist.cov = cov
        dist._chol = None
        return dist

    @property
    def dim(self) -> int:
        return self.mean.size

    def chol(self) -> np.ndarray:
        if self._chol is None:
            self._chol = cholesky_psd(self.cov)
        return self._chol

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.chol() @ rng.standard_normal(self.dim)

    def log_pdf(self, value) -> float:
        value = np.asarray(value, dtype=float)
        L = self.chol()
        y = _forward_solve(L, value - self.mean)
        log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
        return -0.5 * (self.dim * _LOG_2PI + log_det + float(y @ y))

    def __repr__(self):
        return f"GaussianND(dim={self.dim})"


def _forward_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    # solve L y = b for lower-triangular L; dimensions here are tiny (<= 6)
    n = L.shape[0]
    y = np.empty(n)
    for i in range(n):
        y[i] = (b[i] - L[i, :i] @ y[:i]) / L[i, i]
    return y


class UniformBox:
    """Uniform distribution on an axis-aligned box [lower, upper]."""

    __slots__ = ("lower", "upper", "_log_volume")

    def __init__(self, lower, upper):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-d vectors of equal length")
        if not np.all(lower < upper):
            raise ValueError("need lower[i] < upper[i] for all i")
        self.lower = lower
        self.upper = upper
        self._log_volume = float(np.sum(np.log(upper - lower)))

    @property
    def dim(self) -> int:
        return self.lower.size

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)

    def log_pdf(self, value) -> float:
        value = np.asarray(value, dtype=float)
        if np.all(value >= self.lower) and np.all(value <= self.upper):
            return -self._log_volume
        return -math.inf

    def __repr__(self):
        return f"UniformBox({self.lower.tolist()}, {self.upper.tolist()})"


class PoissonDist:
    __slots__ = ("rate",)

    def __init__(self, rate: float):
        if not rate > 0.0:
            raise ValueError(f"rate must be positive, got {rate}")
        self.rate = float(rate)

    def sample(self, rng: np.random.Generator) -> int:
        # numpy's Generator uses exact inversion / transformed rejection
        return int(rng.poisson(self.rate))

    def log_pdf(self, value) -> float:
        k = int(value)
        if k != value or k < 0:
            return -math.inf
        return k * math.log(self.rate) - self.rate - math.lgamma(k + 1)

    def __repr__(self):
        return f"PoissonDist(rate={self.rate})"


class BernoulliDist:
    __slots__ = ("prob",)

    def __init__(self, prob: float):
        if not 0.0 <= prob <= 1.0:
            raise ValueError(f"prob must be in [0, 1], got {prob}")
        self.prob = float(prob)

    def sample(self, rng: np.random.Generator) -> bool:
        return bool(rng.random() < self.prob)

    def log_pdf(self, value) -> float:
        if value not in (0, 1, True, False):
            return -math.inf
        p = self.prob if value else 1.0 - self.prob
        return math.log(p) if p > 0.0 else -math.inf

    def __repr__(self):
        return f"BernoulliDist(prob={self.prob})"


class CategoricalDist:
    """Categorical over indices 0..n-1 with explicit probabilities."""

    __slots__ = ("probs", "_cum")

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a nonempty vector")
        if np.any(probs < 0.0):
            raise ValueError("probs must be nonnegative")
        total = float(probs.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probs must sum to 1 within 1e-9, got {total}")
        self.probs = probs
        self._cum = np.cumsum(probs)

    def sample(self, rng: np.random.Generator) -> int:
        u = rng.random()
        return int(np.searchsorted(self._cum, u, side="right"))

    def log_pdf(self, value) -> float:
        k = int(value)
        if k != value or not 0 <= k < self.probs.size or self.probs[k] == 0.0:
            return -math.inf
        return math.log(self.probs[k])

    def __repr__(self):
        return f"CategoricalDist(n={self.probs.size})"


def sample(dist, rng: np.random.Generator):
    """Draw one value from ``dist`` using the given random stream."""
    return dist.sample(rng)


def log_pdf(dist, value) -> float:
    """Log density (or log mass) of ``value`` under ``dist``; -inf off support."""
    return dist.log_pdf(value)


def poisson_pmf(k: int, rate: float) -> float:
    """P(X = k) for X ~ Poisson(rate)."""
    if k < 0 or int(k) != k:
        raise ValueError(f"k must be a nonnegative integer, got {k}")
    if not rate > 0.0:
        raise ValueError(f"rate must be positive, got {rate}")
    return math.exp(k * math.log(rate) - rate - math.lgamma(k + 1))


def poisson_cdf(k: int, rate: float) -> float:
    """P(X <= k), accumulated from the same pmf terms as :func:`poisson_pmf`."""
    if k < 0 or int(k) != k:
        raise ValueError(f"k must be a nonnegative integer, got {k}")
    if not rate > 0.0:
        raise ValueError(f"rate must be positive, got {rate}")
    return min(1.0, math.fsum(poisson_pmf(j, rate) for j in range(int(k) + 1)))


def log_rising_factorial(a: float, n: int) -> float:
    """log of a * (a+1) * ... * (a+n-1); zero for the empty product n = 0."""
    if not a > 0.0:
        raise ValueError(f"need a > 0, got {a}")
    if n < 0 or int(n) != n:
        raise ValueError(f"n must be a nonnegative integer, got {n}")
    return math.lgamma(a + n) - math.lgamma(a)


def log_sum_exp(xs) -> float:
    """log sum exp with max shift; -inf when every entry is -inf."""
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        raise ValueError("log_sum_exp of empty vector")
    m = float(np.max(xs))
    if m == -math.inf:
        return -math.inf
    return m + math.log(float(np.sum(np.exp(xs - m))))


def normalize_log_weights(xs) -> tuple[np.ndarray, float]:
    """Normalized probabilities and the log mean weight of a log-weight vector.

    Degenerate input (all -inf) yields uniform probabilities and -inf log
    mean; callers that cannot tolerate that must check first.
    """
    xs = np.asarray(xs, dtype=float)
    total = log_sum_exp(xs)
    if total == -math.inf:
        probs = np.full(xs.size, 1.0 / xs.size)
    else:
        probs = np.exp(xs - total)
        probs /= probs.sum()
    return probs, total - math.log(xs.size)
