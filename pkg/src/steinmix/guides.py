"""Guide families: what a single particle parameterizes.

A guide maps one particle vector psi to a distribution over the latent
space.  The mixture methods place a uniform mixture over the per-particle
guides; the point-mass guide is the degenerate case where the particle is
the latent point itself, which is what plain SVGD transports.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    """Inverse of softplus for positive y (underflows for y below ~1e-300)."""
    y = np.asarray(y, dtype=np.float64)
    out = np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))
    return out if out.ndim else float(out)


def ordered_sum(values: np.ndarray, axis: int) -> np.ndarray:
    """Sum along an axis in value order, so the result is independent of
    the original ordering (used where permutation invariance must be exact)."""
    return np.sort(values, axis=axis).sum(axis=axis)


class GaussianGuide:
    """Fully factorized Gaussian: psi = [loc, raw_scale], scale = softplus(raw_scale).

    The softplus link keeps scales positive for any real raw parameter
    (raw values below about -700 underflow to zero scale in float64).
    """

    point_mass = False

    def __init__(self, latent_dim: int):
        if latent_dim < 1:
            raise ValueError(f"latent_dim must be >= 1, got {latent_dim}")
        self.latent_dim = int(latent_dim)
        self.particle_dim = 2 * self.latent_dim

    def layout(self) -> dict:
        return {"loc_dim": self.latent_dim, "raw_scale_dim": self.latent_dim}

    def split(self, psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        psi = self._check_psi(psi)
        return psi[..., : self.latent_dim], psi[..., self.latent_dim :]

    def pack(self, loc: np.ndarray, scale: np.ndarray) -> np.ndarray:
        """Build a particle from loc and (positive) scale."""
        loc = np.asarray(loc, dtype=np.float64)
        scale = np.asarray(scale, dtype=np.float64)
        if loc.shape != (self.latent_dim,) or scale.shape != (self.latent_dim,):
            raise ValueError("loc and scale must each have length latent_dim")
        if np.any(scale <= 0):
            raise ValueError("scale must be positive")
        return np.concatenate([loc, softplus_inverse(scale)])

    def scales(self, psi: np.ndarray) -> np.ndarray:
        _, raw = self.split(psi)
        return softplus(raw)

    def sample(self, psi: np.ndarray, n_draws: int, rng: np.random.Generator) -> np.ndarray:
        eps = rng.standard_normal((n_draws, self.latent_dim))
        return self.sample_from_noise(psi, eps)

    def sample_from_noise(self, psi: np.ndarray, eps: np.ndarray) -> np.ndarray:
        """Deterministic reparameterized draws loc + scale * eps.

        ``psi`` may be a single particle (pd,) or a stack (m, pd) matched
        against ``eps`` of shape (..., d) or (m, ..., d) respectively.
        """
        loc, raw = self.split(psi)
        scale = softplus(raw)
        if psi.ndim == 1:
            return loc + scale * np.asarray(eps, dtype=np.float64)
        return loc[:, None, :] + scale[:, None, :] * np.asarray(eps, dtype=np.float64)

    def log_density(self, theta: np.ndarray, psi: np.ndarray):
        """log q(theta | psi); theta may be a vector or a stack of rows."""
        theta = self._check_theta(theta)
        loc, raw = self.split(psi)
        scale = softplus(raw)
        z = (theta - loc) / scale
        out = -0.5 * self.latent_dim * np.log(2.0 * np.pi) - np.log(scale).sum() - 0.5 * (z * z).sum(axis=-1)
        return float(out) if theta.ndim == 1 else out

    def grad_psi_log_density(self, theta: np.ndarray, psi: np.ndarray) -> np.ndarray:
        """Gradient of log q(theta | psi) with respect to psi."""
        theta = self._check_theta(theta)
        loc, raw = self.split(psi)
        scale = softplus(raw)
        z = (theta - loc) / scale
        dloc = z / scale
        draw = (z * z - 1.0) * expit(raw) / scale
        return np.concatenate([dloc, draw], axis=-1)

    def log_density_matrix(self, thetas: np.ndarray, particles: np.ndarray) -> np.ndarray:
        """Matrix L[t, j] = log q(thetas[t] | particles[j])."""
        thetas, particles = self._check_batch(thetas, particles)
        loc, raw = self.split(particles)
        scale = softplus(raw)
        z = (thetas[:, None, :] - loc[None, :, :]) / scale[None, :, :]
        return (
            -0.5 * self.latent_dim * np.log(2.0 * np.pi)
            - np.log(scale).sum(axis=1)[None, :]
            - 0.5 * np.einsum("tjd,tjd->tj", z, z)
        )

    def score_matrix(self, thetas: np.ndarray, particles: np.ndarray) -> np.ndarray:
        """Tensor S[t, j] = grad wrt particles[j] of log q(thetas[t] | particles[j])."""
        _, scores = self.log_density_and_score_matrix(thetas, particles)
        return scores

    def log_density_and_score_matrix(self, thetas: np.ndarray, particles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(log_density_matrix, score_matrix)`` sharing the standardized
        residuals, with the scores written straight into one array (the hot
        path evaluates both on the same draws every step)."""
        thetas, particles = self._check_batch(thetas, particles)
        loc, raw = self.split(particles)
        scale = softplus(raw)
        z = (thetas[:, None, :] - loc[None, :, :]) / scale[None, :, :]
        logq = (
            -0.5 * self.latent_dim * np.log(2.0 * np.pi)
            - np.log(scale).sum(axis=1)[None, :]
            - 0.5 * np.einsum("tjd,tjd->tj", z, z)
        )
        d = self.latent_dim
        scores = np.empty(z.shape[:2] + (2 * d,))
        np.divide(z, scale[None, :, :], out=scores[..., :d])
        zz = np.multiply(z, z, out=z)
        zz -= 1.0
        np.multiply(zz, (expit(raw) / scale)[None, :, :], out=scores[..., d:])
        return logq, scores

    def mixture_log_density(self, particles: np.ndarray, theta: np.ndarray):
        """log of the uniform mixture density over the particle guides.

        The inner sum runs in value order, so permuting particles leaves the
        result bit-for-bit unchanged.
        """
        theta = self._check_theta(theta)
        single = theta.ndim == 1
        logq = self.log_density_matrix(np.atleast_2d(theta), np.atleast_2d(particles))
        m = logq.shape[1]
        hi = logq.max(axis=1)
        out = hi + np.log(ordered_sum(np.exp(logq - hi[:, None]), axis=1)) - np.log(m)
        return float(out[0]) if single else out

    def _check_psi(self, psi: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi, dtype=np.float64)
        if psi.shape[-1] != self.particle_dim:
            raise ValueError(f"particle must have length {self.particle_dim}, got {psi.shape[-1]}")
        return psi

    def _check_theta(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape[-1] != self.latent_dim:
            raise ValueError(f"theta must have length {self.latent_dim}, got {theta.shape[-1]}")
        return theta

    def _check_batch(self, thetas: np.ndarray, particles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        thetas = np.asarray(thetas, dtype=np.float64)
        particles = np.asarray(particles, dtype=np.float64)
        if thetas.ndim != 2 or thetas.shape[1] != self.latent_dim:
            raise ValueError(f"thetas must be (n, {self.latent_dim}), got {thetas.shape}")
        if particles.ndim != 2 or particles.shape[1] != self.particle_dim:
            raise ValueError(f"particles must be (m, {self.particle_dim}), got {particles.shape}")
        return thetas, particles


class PointMassGuide:
    """Degenerate guide: the particle is the latent point.

    Sampling returns the particle itself; densities are not evaluable, and
    mixture methods handle this guide through their closed-form reduction
    instead of the score-function estimator.
    """

    point_mass = True

    def __init__(self, latent_dim: int):
        if latent_dim < 1:
            raise ValueError(f"latent_dim must be >= 1, got {latent_dim}")
        self.latent_dim = int(latent_dim)
        self.particle_dim = self.latent_dim

    def layout(self) -> dict:
        return {"loc_dim": self.latent_dim, "raw_scale_dim": 0}

    def sample(self, psi: np.ndarray, n_draws: int, rng: np.random.Generator) -> np.ndarray:
        psi = np.asarray(psi, dtype=np.float64)
        return np.tile(psi, (n_draws, 1))

    def log_density(self, theta, psi):
        raise NotImplementedError("a point mass has no density to evaluate")

    def mixture_log_density(self, particles, theta):
        raise NotImplementedError("a point mass has no density to evaluate")
