"""Self-checks wired to the `sanity` command.

Each check accepts an optional hook that substitutes one ingredient, so the
test suite can verify the check actually fails when the property it guards
is broken (flipped repulsion sign, wrong minibatch scaling, biased
gradients).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import RunConfig, map_step, mixture_grads, ovi_step, run_inference
from .guides import GaussianGuide, PointMassGuide, softplus_inverse
from .kernels import RbfKernel
from .metrics import dimension_marginal_variance
from .models import (
    BnnRegressionModel,
    Dataset,
    GaussianTarget,
    NormalLocationModel,
    minibatch_expectation_check,
)
from .optim import make_optimizer


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def finite_difference_grad(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        lo, hi = x.copy(), x.copy()
        lo[i] -= step
        hi[i] += step
        out[i] = (f(hi) - f(lo)) / (2.0 * step)
    return out


def check_gradients(bias: float = 0.0, seed: int = 20) -> CheckResult:
    """Analytic gradients against central differences.

    ``bias`` is added to every analytic gradient; any nonzero value must
    make the check fail.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0

    def compare(analytic, f, x, step=1e-6):
        nonlocal worst
        fd = finite_difference_grad(f, x, step)
        err = np.abs((analytic + bias) - fd).max()
        worst = max(worst, float(err))

    kern = RbfKernel(1.7)
    x, y = rng.normal(size=3), rng.normal(size=3)
    compare(kern.grad_first(x, y), lambda v: kern(v, y), x)

    guide = GaussianGuide(2)
    psi = np.concatenate([rng.normal(size=2), softplus_inverse(rng.uniform(0.5, 2.0, size=2))])
    theta = rng.normal(size=2)
    compare(guide.grad_psi_log_density(theta, psi), lambda v: guide.log_density(theta, v), psi)

    target = GaussianTarget(3, mean=0.4, variance=1.9)
    t3 = rng.normal(size=3)
    compare(target.grad_log_joint(t3), target.log_joint, t3)

    loc = NormalLocationModel(rng.normal(size=4), prior_mean=0.3, prior_sd=1.4, noise_sd=0.8)
    t1 = rng.normal(size=1)
    compare(loc.grad_log_joint(t1), loc.log_joint, t1)

    data = Dataset(rng.normal(size=(4, 2)), rng.normal(size=(4, 1)))
    bnn_kwargs = ({"activation": "tanh"}, {"activation": "relu", "noise_sigma": None, "latent_precision": True})
    for kwargs in bnn_kwargs:
        bnn = BnnRegressionModel(data, hidden_dim=3, **kwargs)
        tb = 0.5 * rng.normal(size=bnn.latent_dim)
        compare(bnn.grad_log_joint(tb), bnn.log_joint, tb)

    ok = worst < 1e-5
    return CheckResult("gradients-vs-finite-differences", ok, f"max abs error {worst:.3e}")


def check_point_mass_reduction(estimator_fn=None) -> CheckResult:
    """A mixture run with point-mass guides must retrace SVGD bit for bit."""
    estimator_fn = estimator_fn or mixture_grads
    model = GaussianTarget(2, mean=0.5, variance=2.0)
    guide = PointMassGuide(2)
    init = engine.init_particles(RunConfig("svgd", 4, 1, 0.1, init_low=-3, init_high=3), guide, seed=7)
    kwargs = dict(init=init.copy())
    base = RunConfig("svgd", 4, 60, 0.1, optimizer="adam")
    svgd = run_inference(model, guide, base, seed=7, **kwargs)

    def direction_via_estimator(particles, per_grads, kernel, alpha, anneal=1.0):
        grads, _ = estimator_fn(model, guide, particles, 1, 7)
        return engine.default_direction(particles, grads / particles.shape[0], kernel, alpha, anneal)

    mix = run_inference(
        model, guide, RunConfig("smi", 4, 60, 0.1, optimizer="adam"), seed=7, init=init.copy(),
        direction_fn=direction_via_estimator,
    )
    ok = np.array_equal(svgd.particles, mix.particles)
    gap = float(np.abs(svgd.particles - mix.particles).max())
    return CheckResult("point-mass-reduction", ok, f"max particle gap {gap:.3e}")


def check_single_particle_reduction(estimator_fn=None) -> CheckResult:
    """OVI equals a one-particle mixture run; MAP equals one-particle SVGD."""
    estimator_fn = estimator_fn or mixture_grads
    model = GaussianTarget(2, mean=-0.3, variance=1.5)
    guide = GaussianGuide(2)
    seed, steps = 11, 60
    config = RunConfig("smi", 1, steps, 0.05, optimizer="adagrad", n_elbo_draws=4)
    init = engine.init_particles(config, guide, seed)
    mix = run_inference(model, guide, config, seed, init=init.copy())
    psi = init[0].copy()
    opt = make_optimizer("adagrad", 0.05)
    for step in range(steps):
        grads, _ = estimator_fn(model, guide, psi[None, :], 4, seed, step)
        psi = psi + opt.update(grads[0])
    ok1 = np.array_equal(psi, mix.particles[0])

    pm = PointMassGuide(2)
    config2 = RunConfig("svgd", 1, steps, 0.05, optimizer="adam")
    init2 = engine.init_particles(config2, pm, seed)
    svgd = run_inference(model, pm, config2, seed, init=init2.copy())
    theta = init2[0].copy()
    opt2 = make_optimizer("adam", 0.05)
    for _ in range(steps):
        theta = map_step(theta, model, opt2)
    ok2 = np.array_equal(theta, svgd.particles[0])
    detail = f"ovi gap {np.abs(psi - mix.particles[0]).max():.3e}, map gap {np.abs(theta - svgd.particles[0]).max():.3e}"
    return CheckResult("single-particle-reduction", ok1 and ok2, detail)


def check_minibatch_unbiasedness(model=None, batch_size: int = 2) -> CheckResult:
    """Averaging the scaled log joint over all batches must match full data."""
    if model is None:
        model = NormalLocationModel(np.array([1.0, -0.4, 0.7, 2.1, -1.3]), prior_sd=1.5, noise_sd=0.9)
    theta = np.full(model.latent_dim, 0.37)
    avg, full = minibatch_expectation_check(model, theta, batch_size)
    err = abs(avg - full)
    from itertools import combinations

    gsum = np.zeros(model.latent_dim)
    batches = list(combinations(range(model.n_data), batch_size))
    for idx in batches:
        gsum += model.grad_log_joint(theta, batch=np.array(idx))
    gerr = float(np.abs(gsum / len(batches) - model.grad_log_joint(theta)).max())
    ok = err < 1e-9 and gerr < 1e-9
    return CheckResult("minibatch-unbiasedness", ok, f"log-joint gap {err:.2e}, gradient gap {gerr:.2e}")


def check_variance_band(direction_fn=None) -> CheckResult:
    """A short SVGD run on a standard Gaussian keeps marginal variance sane.

    Collapses (for example from a flipped repulsion sign) land far below
    the [0.5, 1.5] band.
    """
    model = GaussianTarget(2)
    guide = PointMassGuide(2)
    config = RunConfig("svgd", 20, 1500, 0.05, optimizer="adam", init_low=-10.0, init_high=10.0)
    result = run_inference(model, guide, config, seed=3, direction_fn=direction_fn)
    mv = float(dimension_marginal_variance(result.particles).mean())
    return CheckResult("variance-band", 0.5 <= mv <= 1.5, f"mean marginal variance {mv:.3f}")


def flipped_repulsion(particles, per_grads, kernel, alpha, anneal=1.0):
    """Deliberately broken direction (repulsion subtracted); for testing the
    variance-band check's sensitivity."""
    _, attract, repulse = engine.combine_forces(particles, per_grads, kernel, alpha, anneal)
    return anneal * attract - (alpha / particles.shape[0]) * repulse


def run_all_checks() -> list[CheckResult]:
    return [
        check_gradients(),
        check_point_mass_reduction(),
        check_single_particle_reduction(),
        check_minibatch_unbiasedness(),
        check_variance_band(),
    ]
