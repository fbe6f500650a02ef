"""Particle updates: mixture-ELBO gradients, kernelized transport, runners.

The central update moves every particle by

    direction_l = gamma * sum_i k(psi_i, psi_l) g_i + (alpha / m) * sum_i grad_1 k(psi_i, psi_l)

where g_i is the per-particle objective gradient divided by the particle
count, gamma is an annealing factor (1 outside ASVGD), and alpha scales the
repulsive term.  Mixture methods obtain g_i from a score-function estimator
of the mixture ELBO gradient; point-mass guides reduce it in closed form to
the log-joint gradient, which recovers SVGD, and a single particle recovers
ordinary VI or MAP.

Estimator sums over mixture components run in value order, so permuting
particles (with their draw streams) permutes every output bit-for-bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .guides import ordered_sum
from .kernels import RbfKernel, median_bandwidth
from .models import NumericalFailure
from .optim import make_optimizer, optimizer_from_state
from .streams import TAG_ELBO, TAG_GUIDE_DRAWS, TAG_INIT, TAG_MINIBATCH, substream

METHODS = ("smi", "svgd", "asvgd", "ovi", "map")

CHECKPOINT_FORMAT = "steinmix-checkpoint-1"

# Cap on the cell count of the largest estimator intermediate (the
# per-draw score tensor); ~32 MB of float64 per block.
DRAW_CELL_BUDGET = 4_194_304


@dataclass
class RunConfig:
    """Settings for one inference run."""

    method: str
    n_particles: int
    max_steps: int
    step_size: float
    optimizer: str = "adam"
    alpha: float = 1.0
    n_elbo_draws: int = 10
    batch_size: int | None = None
    anneal_cycles: int = 4
    anneal_power: float = 2.0
    use_convergence: bool = False
    convergence_fast: int = 35
    convergence_slow: int = 350
    init_low: float = -1.0
    init_high: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.n_particles < 1:
            raise ValueError(f"n_particles must be >= 1, got {self.n_particles}")
        if self.method in ("ovi", "map") and self.n_particles != 1:
            raise ValueError(f"{self.method} runs a single particle, got {self.n_particles}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.n_elbo_draws < 1:
            raise ValueError(f"n_elbo_draws must be >= 1, got {self.n_elbo_draws}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1 or None, got {self.batch_size}")
        if self.anneal_cycles < 1 or self.anneal_power <= 0:
            raise ValueError("anneal_cycles must be >= 1 and anneal_power positive")
        if not 0 < self.convergence_fast < self.convergence_slow:
            raise ValueError("need 0 < convergence_fast < convergence_slow")
        if not self.init_low < self.init_high:
            raise ValueError("need init_low < init_high")


@dataclass
class RunRecord:
    """Per-step trace of an inference run."""

    force_norms: list = field(default_factory=list)
    elbo_estimates: list = field(default_factory=list)
    anneal_factors: list = field(default_factory=list)
    converged_at: int | None = None


@dataclass
class RunResult:
    particles: np.ndarray
    step: int
    record: RunRecord
    config: RunConfig
    seed: int
    optimizer_state: dict


def draw_noise(seed: int, step: int, n_particles: int, n_draws: int, dim: int) -> np.ndarray:
    """Standard-normal draws, one stream per (step, particle)."""
    noise = np.empty((n_particles, n_draws, dim))
    for ell in range(n_particles):
        substream(seed, TAG_GUIDE_DRAWS, step, ell).standard_normal(out=noise[ell])
    return noise


def mixture_grads(
    model,
    guide,
    particles: np.ndarray,
    n_draws: int,
    seed: int,
    step: int = 0,
    batch: np.ndarray | None = None,
    noise: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Estimate m * d/dpsi_l of the mixture ELBO for every particle.

    Returns an (m, particle_dim) matrix and a Monte Carlo ELBO estimate
    from the same draws.  For point-mass guides the estimator collapses in
    closed form to the log-joint gradient at each particle (no draws, ELBO
    undefined).  ``noise`` overrides the seeded standard-normal draws and
    must have shape (m, n_draws, latent_dim).

    Draws are processed in fixed-size blocks so the (draws, m, m,
    particle_dim) score tensor never exceeds ``DRAW_CELL_BUDGET`` cells;
    the block layout depends only on the shapes, so results are
    deterministic, and small problems run in a single block.
    """
    particles = np.asarray(particles, dtype=np.float64)
    if particles.ndim != 2:
        raise ValueError(f"particles must be (m, particle_dim), got {particles.shape}")
    m = particles.shape[0]
    if guide.point_mass:
        return model.grad_log_joint_many(particles, batch), float("nan")
    d = guide.latent_dim
    if noise is None:
        noise = draw_noise(seed, step, m, n_draws, d)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (m, n_draws, d):
        raise ValueError(f"noise must have shape {(m, n_draws, d)}, got {noise.shape}")
    pd = particles.shape[1]
    block = max(1, DRAW_CELL_BUDGET // (m * m * pd))

    term1_sum = np.zeros((m, pd))
    per_component_sum = np.zeros((m, m, pd))
    weight_sums = np.zeros(m)
    for start in range(0, n_draws, block):
        chunk = noise[:, start : start + block]
        c = chunk.shape[1]
        thetas = guide.sample_from_noise(particles, chunk)
        flat = thetas.reshape(m * c, d)
        logp = model.log_joint_many(flat, batch)
        logq, scores = guide.log_density_and_score_matrix(flat, particles)

        hi = logq.max(axis=1)
        ex = np.exp(logq - hi[:, None])
        denom = ordered_sum(ex, axis=1)
        log_sum_q = hi + np.log(denom)
        ratios = ex / denom[:, None]

        weights = (logp - log_sum_q).reshape(m, c)
        own_scores = scores.reshape(m, c, m, pd)[np.arange(m), :, np.arange(m), :]
        term1_sum += (weights[:, :, None] * own_scores).sum(axis=1)
        per_component_sum += np.einsum("isl,islp->ilp", ratios.reshape(m, c, m), scores.reshape(m, c, m, pd))
        weight_sums += weights.sum(axis=1)

    term1 = term1_sum / n_draws
    term2 = np.sort(per_component_sum, axis=0).sum(axis=0) / n_draws
    elbo = float(ordered_sum(weight_sums / n_draws, axis=0) / m + math.log(m))
    return term1 - term2, elbo


def smi_attractive_grad(
    model,
    guide,
    particles: np.ndarray,
    ell: int,
    n_draws: int,
    seed: int,
    step: int = 0,
    batch: np.ndarray | None = None,
) -> np.ndarray:
    """Single-particle view of :func:`mixture_grads`: the Monte Carlo
    estimate of m times the mixture-bound gradient for particle ``ell``."""
    particles = np.asarray(particles, dtype=np.float64)
    m = particles.shape[0]
    if not 0 <= ell < m:
        raise ValueError(f"ell must lie in [0, {m}), got {ell}")
    grads, _ = mixture_grads(model, guide, particles, n_draws, seed, step, batch)
    return grads[ell]


def svgd_grads(model, particles: np.ndarray, batch: np.ndarray | None = None) -> np.ndarray:
    """Log-joint gradient at each particle (the SVGD attractive input)."""
    return model.grad_log_joint_many(np.asarray(particles, dtype=np.float64), batch)


def combine_forces(
    particles: np.ndarray,
    per_grads: np.ndarray,
    kernel: RbfKernel,
    alpha: float,
    anneal: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Kernel-weighted attractive and repulsive forces and their combination.

    ``per_grads`` rows are the per-particle objective gradients already
    divided by the particle count.  Sums over particles run in value order
    so the result is exactly permutation-equivariant.
    """
    particles = np.asarray(particles, dtype=np.float64)
    m = particles.shape[0]
    kmat = kernel.pairwise(particles)
    attract = np.sort(kmat[:, :, None] * per_grads[:, None, :], axis=0).sum(axis=0)
    pair_grads = (-2.0 / kernel.bandwidth) * (particles[:, None, :] - particles[None, :, :]) * kmat[:, :, None]
    repulse = np.sort(pair_grads, axis=0).sum(axis=0)
    return anneal * attract + (alpha / m) * repulse, attract, repulse


def default_direction(particles, per_grads, kernel, alpha, anneal=1.0):
    return combine_forces(particles, per_grads, kernel, alpha, anneal)[0]


def anneal_factor(step: int, max_steps: int, cycles: int = 4, power: float = 2.0) -> float:
    """Cyclical annealing factor in [0, 1]; pinned to 1 on the last step."""
    if not 0 <= step < max_steps:
        raise ValueError(f"step must lie in [0, {max_steps}), got {step}")
    if step == max_steps - 1:
        return 1.0
    period = max(1, max_steps // cycles)
    return float(((step % period) / period) ** power)


def elbo_estimate(
    model,
    guide,
    particles: np.ndarray,
    n_draws: int,
    seed: int,
    step: int = 0,
    batch: np.ndarray | None = None,
) -> float:
    """Monte Carlo mixture ELBO with fresh draws (independent of the
    gradient estimator's streams)."""
    particles = np.asarray(particles, dtype=np.float64)
    if guide.point_mass:
        raise ValueError("the mixture ELBO is undefined for point-mass guides")
    m = particles.shape[0]
    d = guide.latent_dim
    noise = np.stack([substream(seed, TAG_ELBO, step, ell).standard_normal((n_draws, d)) for ell in range(m)])
    thetas = guide.sample_from_noise(particles, noise)
    flat = thetas.reshape(m * n_draws, d)
    gap = model.log_joint_many(flat, batch) - guide.mixture_log_density(particles, flat)
    return float(ordered_sum(gap.reshape(m, n_draws).mean(axis=1), axis=0) / m)


def map_step(theta: np.ndarray, model, optimizer, batch: np.ndarray | None = None) -> np.ndarray:
    """Plain gradient ascent on the log joint."""
    theta = np.asarray(theta, dtype=np.float64)
    return theta + optimizer.update(model.grad_log_joint(theta, batch))


def ovi_step(
    psi: np.ndarray,
    model,
    guide,
    optimizer,
    n_draws: int,
    seed: int,
    step: int = 0,
    batch: np.ndarray | None = None,
) -> np.ndarray:
    """Single-guide ELBO ascent using the mixture estimator with m = 1."""
    psi = np.asarray(psi, dtype=np.float64)
    grads, _ = mixture_grads(model, guide, psi[None, :], n_draws, seed, step, batch)
    return psi + optimizer.update(grads[0])


def check_convergence(force_norms, fast: int = 35, slow: int = 350) -> bool:
    """True once the short-window mean force norm exceeds the long-window
    mean, i.e. the force has stopped shrinking."""
    if len(force_norms) < slow:
        return False
    tail = np.asarray(force_norms[-slow:], dtype=np.float64)
    return bool(tail[-fast:].mean() > tail.mean())


def init_particles(config: RunConfig, guide, seed: int) -> np.ndarray:
    rng = substream(seed, TAG_INIT)
    return rng.uniform(config.init_low, config.init_high, size=(config.n_particles, guide.particle_dim))


def run_inference(
    model,
    guide,
    config: RunConfig,
    seed: int,
    init: np.ndarray | None = None,
    direction_fn=None,
    _resume=None,
) -> RunResult:
    """Drive a full particle run and return the trace and final state.

    ``direction_fn`` is a diagnostics hook with the signature of
    ``default_direction``; leave it None for normal operation.
    """
    if config.method in ("svgd", "asvgd", "map") and not guide.point_mass:
        raise ValueError(f"{config.method} transports latent points; use a point-mass guide")
    if direction_fn is None:
        direction_fn = default_direction
    if _resume is not None:
        particles = np.asarray(_resume["particles"], dtype=np.float64)
        start = int(_resume["step"])
        optimizer = optimizer_from_state(_resume["optimizer"])
        record = RunRecord(
            force_norms=list(_resume["force_norms"]),
            elbo_estimates=list(_resume["elbo_estimates"]),
            anneal_factors=list(_resume["anneal_factors"]),
        )
    else:
        particles = np.asarray(init, dtype=np.float64) if init is not None else init_particles(config, guide, seed)
        start = 0
        optimizer = make_optimizer(config.optimizer, config.step_size)
        record = RunRecord()
    m = config.n_particles
    if particles.shape != (m, guide.particle_dim):
        raise ValueError(f"particles must have shape {(m, guide.particle_dim)}, got {particles.shape}")

    uses_estimator = not guide.point_mass
    for step in range(start, config.max_steps):
        batch = None
        if config.batch_size is not None and model.n_data > config.batch_size:
            batch = substream(seed, TAG_MINIBATCH, step).choice(model.n_data, size=config.batch_size, replace=False)
        if uses_estimator:
            estimates, elbo = mixture_grads(model, guide, particles, config.n_elbo_draws, seed, step, batch)
        else:
            estimates, elbo = svgd_grads(model, particles, batch), float("nan")
        gamma = 1.0
        if config.method == "asvgd":
            gamma = anneal_factor(step, config.max_steps, config.anneal_cycles, config.anneal_power)
        bandwidth = median_bandwidth(particles)
        if not np.isfinite(bandwidth):
            bad = int(np.argwhere(~np.isfinite(particles).all(axis=1))[0][0]) if not np.isfinite(particles).all() else 0
            raise NumericalFailure(
                f"particle spread overflowed the bandwidth heuristic at step {step}", theta=particles[bad], step=step
            )
        kernel = RbfKernel(bandwidth)
        direction = direction_fn(particles, estimates / m, kernel, config.alpha, gamma)
        if not np.isfinite(direction).all():
            bad = int(np.argwhere(~np.isfinite(direction))[0][0])
            raise NumericalFailure(f"non-finite update direction for particle {bad} at step {step}", theta=particles[bad], step=step)
        particles = particles + optimizer.update(direction)
        record.force_norms.append(float(np.linalg.norm(direction)))
        record.elbo_estimates.append(elbo)
        record.anneal_factors.append(gamma)
        if config.use_convergence and check_convergence(record.force_norms, config.convergence_fast, config.convergence_slow):
            record.converged_at = step + 1
            return RunResult(particles, step + 1, record, config, seed, optimizer.state())
    return RunResult(particles, config.max_steps, record, config, seed, optimizer.state())


def save_checkpoint(path, result: RunResult):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(result.config),
        "seed": result.seed,
        "step": result.step,
        "particles": result.particles.tolist(),
        "optimizer": result.optimizer_state,
        "force_norms": result.record.force_norms,
        "elbo_estimates": result.record.elbo_estimates,
        "anneal_factors": result.record.anneal_factors,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def resume_from_checkpoint(path, model, guide, max_steps: int | None = None) -> RunResult:
    """Continue a checkpointed run; the trajectory matches an uninterrupted
    run of the same seed step for step.

    Passing ``max_steps`` extends or shortens the run.  For annealed runs
    the remaining schedule follows the new horizon, so an extended run no
    longer matches a from-scratch run of that length; the other methods
    extend exactly.
    """
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a recognized checkpoint (format {payload.get('format')!r})")
    config = RunConfig(**payload["config"])
    if max_steps is not None:
        config = replace(config, max_steps=max_steps)
    return run_inference(model, guide, config, int(payload["seed"]), _resume=payload)
