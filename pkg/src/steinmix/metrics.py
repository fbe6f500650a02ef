"""Evaluation: moments, intervals, predictive scores, recovery points."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .guides import softplus
from .streams import TAG_PREDICTIVE, substream


def dimension_marginal_variance(samples: np.ndarray) -> np.ndarray:
    """Unbiased per-dimension variance of a sample matrix (n, d)."""
    samples = _check_samples(samples)
    return samples.var(axis=0, ddof=1)


def frobenius_to_identity(samples: np.ndarray) -> float:
    """Frobenius distance between the sample covariance and the identity."""
    samples = _check_samples(samples)
    cov = np.atleast_2d(np.cov(samples, rowvar=False, ddof=1))
    delta = cov - np.eye(cov.shape[0])
    return float(np.sqrt((delta * delta).sum()))


def _check_samples(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ValueError(f"samples must be (n, d), got {samples.shape}")
    if samples.shape[0] < 2:
        raise ValueError("variance needs at least two samples")
    return samples


def mixture_moments(guide, particles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact mean and covariance of a uniform mixture of factorized Gaussians."""
    particles = np.asarray(particles, dtype=np.float64)
    loc, raw = guide.split(particles)
    scale = softplus(raw)
    mean = loc.mean(axis=0)
    second = (np.einsum("md,me->de", loc, loc) + np.diag((scale * scale).sum(axis=0))) / particles.shape[0]
    return mean, second - np.outer(mean, mean)


def mixture_marginal_variance(guide, particles: np.ndarray) -> np.ndarray:
    return np.diag(mixture_moments(guide, particles)[1]).copy()


def mixture_frobenius_to_identity(guide, particles: np.ndarray) -> float:
    _, cov = mixture_moments(guide, particles)
    delta = cov - np.eye(cov.shape[0])
    return float(np.sqrt((delta * delta).sum()))


def hdi(samples: np.ndarray, mass: float = 0.9) -> tuple[float, float]:
    """Narrowest interval containing ceil(mass * n) sorted samples.

    Ties go to the lowest start index; mass 1 spans the whole sample.
    """
    samples = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
    n = samples.size
    if n < 1:
        raise ValueError("hdi needs at least one sample")
    if not 0.0 < mass <= 1.0:
        raise ValueError(f"mass must lie in (0, 1], got {mass}")
    k = math.ceil(mass * n)
    widths = samples[k - 1 :] - samples[: n - k + 1]
    start = int(np.argmin(widths))
    return float(samples[start]), float(samples[start + k - 1])


def hdi_widths(draws: np.ndarray, mass: float = 0.9) -> np.ndarray:
    """HDI width per column of a (n_draws, n_points) matrix."""
    draws = np.asarray(draws, dtype=np.float64)
    return np.array([hi - lo for lo, hi in (hdi(col, mass) for col in draws.T)])


def lppd_from_log(log_densities: np.ndarray) -> float:
    """Sum over points of log mean predictive density, from per-draw logs (n, s)."""
    log_densities = np.asarray(log_densities, dtype=np.float64)
    if log_densities.ndim != 2:
        raise ValueError(f"log densities must be (n_points, n_draws), got {log_densities.shape}")
    s = log_densities.shape[1]
    return float((logsumexp(log_densities, axis=1) - math.log(s)).sum())


def lppd(densities: np.ndarray) -> float:
    """Same as lppd_from_log but on raw densities; zero rows give -inf."""
    densities = np.asarray(densities, dtype=np.float64)
    if densities.ndim != 2:
        raise ValueError(f"densities must be (n_points, n_draws), got {densities.shape}")
    if (densities < 0).any():
        raise ValueError("densities must be non-negative")
    with np.errstate(divide="ignore"):
        return lppd_from_log(np.log(densities))


def rmse(predictions: np.ndarray, targets: np.ndarray) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(f"shape mismatch: {predictions.shape} vs {targets.shape}")
    return float(np.sqrt(((predictions - targets) ** 2).mean()))


def nll_per_point(log_densities: np.ndarray) -> float:
    """Negative LPPD divided by the number of points (per-point normalization)."""
    log_densities = np.asarray(log_densities, dtype=np.float64)
    return -lppd_from_log(log_densities) / log_densities.shape[0]


@dataclass(frozen=True)
class AtLimit:
    """Recovery sentinel: SVGD never matched the reference within the cap."""

    cap: int

    def __str__(self):
        return f"> {self.cap}"


def recovery_point(reference_lppd: float, svgd_lppd_fn, max_particles: int):
    """Smallest doubling particle count whose LPPD beats the reference.

    ``svgd_lppd_fn(m)`` evaluates SVGD with m particles; counts double from
    one until ``max_particles``.  Returns the count or an AtLimit sentinel.
    """
    if max_particles < 1:
        raise ValueError(f"max_particles must be >= 1, got {max_particles}")
    m = 1
    while m <= max_particles:
        if svgd_lppd_fn(m) > reference_lppd:
            return m
        m *= 2
    return AtLimit(max_particles)


def recovery_median(values):
    """Median of recovery points, ordering AtLimit above any count."""
    if not values:
        raise ValueError("no recovery points given")
    ordered = sorted(values, key=lambda v: math.inf if isinstance(v, AtLimit) else v)
    n = len(ordered)
    a, b = ordered[(n - 1) // 2], ordered[n // 2]
    if isinstance(a, AtLimit) or isinstance(b, AtLimit):
        return b if isinstance(b, AtLimit) else a
    return (a + b) / 2.0 if a != b else a


@dataclass
class PredictiveSample:
    """Posterior-predictive draws on a fixed input set.

    ``means`` has shape (n_draws, n_inputs, q); ``noise_sigmas`` is the
    observation scale per draw; ``provenance`` records the (component,
    draw index) pair behind each parameter draw.
    """

    means: np.ndarray
    noise_sigmas: np.ndarray
    provenance: np.ndarray

    def mean_prediction(self) -> np.ndarray:
        return self.means.mean(axis=0)

    def log_densities(self, targets: np.ndarray) -> np.ndarray:
        """Per-point, per-draw Gaussian log density, shape (n_inputs, n_draws)."""
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != self.means.shape[1:]:
            raise ValueError(f"targets must have shape {self.means.shape[1:]}, got {targets.shape}")
        sig = self.noise_sigmas[:, None, None]
        ll = -0.5 * math.log(2.0 * math.pi) - np.log(sig) - 0.5 * ((targets[None] - self.means) / sig) ** 2
        return ll.sum(axis=2).T

    def y_draws(self, seed: int) -> np.ndarray:
        """Noisy predictive outputs, one per parameter draw."""
        rng = substream(seed, TAG_PREDICTIVE, unit=1)
        return self.means + self.noise_sigmas[:, None, None] * rng.standard_normal(self.means.shape)


def sample_parameters(guide, particles: np.ndarray, n_draws: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw latent vectors from the uniform mixture over particle guides.

    Point-mass guides return the chosen particles themselves.  Returns
    (thetas, provenance) where provenance rows are (component, draw index).
    """
    particles = np.asarray(particles, dtype=np.float64)
    m = particles.shape[0]
    rng = substream(seed, TAG_PREDICTIVE)
    comps = rng.integers(0, m, size=n_draws)
    provenance = np.stack([comps, np.arange(n_draws)], axis=1)
    if guide.point_mass:
        return particles[comps], provenance
    loc, raw = guide.split(particles)
    scale = softplus(raw)
    eps = rng.standard_normal((n_draws, guide.latent_dim))
    return loc[comps] + scale[comps] * eps, provenance


def posterior_predictive(model, guide, particles: np.ndarray, inputs: np.ndarray, n_draws: int, seed: int) -> PredictiveSample:
    """Predictive means and noise scales for a regression model."""
    thetas, provenance = sample_parameters(guide, particles, n_draws, seed)
    means = model.predict(thetas, np.asarray(inputs, dtype=np.float64))
    return PredictiveSample(means, model.noise_sigmas(thetas), provenance)
