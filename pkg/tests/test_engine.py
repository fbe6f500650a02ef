import numpy as np
import pytest

import steinmix.engine as engine
from steinmix.engine import (
    RunConfig,
    anneal_factor,
    check_convergence,
    combine_forces,
    draw_noise,
    elbo_estimate,
    init_particles,
    map_step,
    mixture_grads,
    ovi_step,
    resume_from_checkpoint,
    run_inference,
    save_checkpoint,
    svgd_grads,
)
from steinmix.guides import GaussianGuide, PointMassGuide
from steinmix.kernels import RbfKernel
from steinmix.models import GaussianTarget, NormalLocationModel, NumericalFailure
from steinmix.optim import make_optimizer
from steinmix.streams import TAG_GUIDE_DRAWS, substream


def _conjugate_model():
    return NormalLocationModel(
        np.array([0.8, -0.3, 1.4]), prior_mean=0.2, prior_sd=1.3, noise_sd=0.9
    )


def _quadrature_mixture_elbo(model, guide, particles, n_nodes=4001, span=8.0):
    """Trapezoid-rule mixture ELBO for a 1-D latent, used as an oracle."""
    total = 0.0
    m = particles.shape[0]
    for ell in range(m):
        loc = particles[ell, 0]
        scale = guide.scales(particles[ell])[0]
        theta = np.linspace(loc - span * scale, loc + span * scale, n_nodes)
        q_ell = np.exp(guide.log_density(theta[:, None], particles[ell]))
        gap = model.log_joint_many(theta[:, None]) - guide.mixture_log_density(particles, theta[:, None])
        total += np.trapezoid(q_ell * gap, theta)
    return total / m


def _quadrature_grad(model, guide, particles, step=1e-5):
    """Finite differences of the quadrature ELBO, times the particle count."""
    m, pd = particles.shape
    out = np.empty((m, pd))
    for ell in range(m):
        for k in range(pd):
            lo, hi = particles.copy(), particles.copy()
            lo[ell, k] -= step
            hi[ell, k] += step
            out[ell, k] = (
                _quadrature_mixture_elbo(model, guide, hi) - _quadrature_mixture_elbo(model, guide, lo)
            ) / (2 * step)
    return m * out


@pytest.mark.parametrize("m", [1, 2, 3])
def test_mixture_grads_unbiased_against_quadrature_oracle(m):
    model = _conjugate_model()
    guide = GaussianGuide(1)
    locs = np.array([0.1, 0.6, -0.4])[:m]
    scales = np.array([0.8, 0.5, 1.2])[:m]
    particles = np.stack([guide.pack(locs[i : i + 1], scales[i : i + 1]) for i in range(m)])
    oracle = _quadrature_grad(model, guide, particles)

    reps, draws = 300, 64
    samples = np.empty((reps, m, 2))
    for r in range(reps):
        samples[r], _ = mixture_grads(model, guide, particles, draws, seed=100, step=r)
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(reps)
    z = np.abs(mean - oracle) / se
    assert z.max() < 5.0, f"worst z-score {z.max():.2f}\nmean\n{mean}\noracle\n{oracle}"


def test_elbo_estimates_unbiased_against_quadrature_oracle():
    model = _conjugate_model()
    guide = GaussianGuide(1)
    particles = np.stack([guide.pack([0.2], [0.9]), guide.pack([0.7], [0.6])])
    oracle = _quadrature_mixture_elbo(model, guide, particles)

    reps, draws = 400, 32
    vals = np.array([elbo_estimate(model, guide, particles, draws, seed=3, step=r) for r in range(reps)])
    se = vals.std(ddof=1) / np.sqrt(reps)
    assert abs(vals.mean() - oracle) / se < 5.0

    grad_elbos = np.array(
        [mixture_grads(model, guide, particles, draws, seed=3, step=r)[1] for r in range(reps)]
    )
    se_g = grad_elbos.std(ddof=1) / np.sqrt(reps)
    assert abs(grad_elbos.mean() - oracle) / se_g < 5.0


def test_mixture_grads_point_mass_reduces_to_log_joint_gradient():
    model = GaussianTarget(2, mean=0.3, variance=1.7)
    guide = PointMassGuide(2)
    particles = np.array([[0.5, -1.0], [2.0, 0.7], [-0.3, 0.1]])
    grads, elbo = mixture_grads(model, guide, particles, 10, seed=0)
    np.testing.assert_array_equal(grads, model.grad_log_joint_many(particles))
    assert np.isnan(elbo)
    np.testing.assert_array_equal(svgd_grads(model, particles), grads)


def test_mixture_grads_permutation_equivariant_bitwise():
    model = _conjugate_model()
    guide = GaussianGuide(1)
    particles = np.array([[0.1, 0.3], [0.6, -0.2], [-0.4, 0.8]])
    noise = np.random.default_rng(5).standard_normal((3, 20, 1))
    base, base_elbo = mixture_grads(model, guide, particles, 20, seed=0, noise=noise)
    perm = np.array([2, 0, 1])
    permuted, perm_elbo = mixture_grads(model, guide, particles[perm], 20, seed=0, noise=noise[perm])
    np.testing.assert_array_equal(permuted, base[perm])
    assert perm_elbo == base_elbo


def test_mixture_grads_chunking_matches_single_pass():
    model = _conjugate_model()
    guide = GaussianGuide(1)
    particles = np.array([[0.1, 0.3], [0.6, -0.2]])
    noise = np.random.default_rng(6).standard_normal((2, 64, 1))
    whole, whole_elbo = mixture_grads(model, guide, particles, 64, seed=0, noise=noise)
    saved = engine.DRAW_CELL_BUDGET
    try:
        engine.DRAW_CELL_BUDGET = 2 * 2 * 2 * 7  # seven draws per block
        blocked, blocked_elbo = mixture_grads(model, guide, particles, 64, seed=0, noise=noise)
    finally:
        engine.DRAW_CELL_BUDGET = saved
    np.testing.assert_allclose(blocked, whole, rtol=1e-12, atol=1e-14)
    assert blocked_elbo == pytest.approx(whole_elbo, rel=1e-12)


def test_mixture_grads_validates_shapes():
    model = _conjugate_model()
    guide = GaussianGuide(1)
    with pytest.raises(ValueError):
        mixture_grads(model, guide, np.zeros(4), 8, seed=0)
    with pytest.raises(ValueError):
        mixture_grads(model, guide, np.zeros((2, 2)), 8, seed=0, noise=np.zeros((2, 7, 1)))


def test_smi_attractive_grad_is_one_row_of_the_matrix():
    model = _conjugate_model()
    guide = GaussianGuide(1)
    particles = np.array([[0.1, 0.3], [0.6, -0.2], [-0.4, 0.8]])
    grads, _ = mixture_grads(model, guide, particles, 16, seed=4, step=2)
    for ell in range(3):
        row = engine.smi_attractive_grad(model, guide, particles, ell, 16, seed=4, step=2)
        np.testing.assert_array_equal(row, grads[ell])
    with pytest.raises(ValueError, match="ell"):
        engine.smi_attractive_grad(model, guide, particles, 3, 16, seed=4)


def test_draw_noise_uses_per_particle_streams():
    noise = draw_noise(seed=9, step=4, n_particles=3, n_draws=6, dim=2)
    assert noise.shape == (3, 6, 2)
    for ell in range(3):
        expected = substream(9, TAG_GUIDE_DRAWS, 4, ell).standard_normal((6, 2))
        np.testing.assert_array_equal(noise[ell], expected)


def test_combine_forces_single_particle_is_identity_on_gradient():
    grads = np.array([[0.7, -2.2]])
    particles = np.array([[1.0, 3.0]])
    direction, attract, repulse = combine_forces(particles, grads, RbfKernel(1.3), alpha=1.0)
    np.testing.assert_array_equal(direction, grads)
    np.testing.assert_array_equal(attract, grads)
    assert np.all(repulse == 0.0)


def test_combine_forces_matches_explicit_loops():
    rng = np.random.default_rng(7)
    particles = rng.normal(size=(5, 3))
    grads = rng.normal(size=(5, 3))
    kern = RbfKernel(0.8)
    direction, attract, repulse = combine_forces(particles, grads, kern, alpha=0.6, anneal=0.9)
    kmat = kern.pairwise(particles)
    want_attract = np.array([sum(kmat[i, j] * grads[i] for i in range(5)) for j in range(5)])
    np.testing.assert_allclose(attract, want_attract, rtol=1e-12)
    np.testing.assert_allclose(repulse, kern.grad_first_sum(particles), rtol=1e-12)
    np.testing.assert_allclose(direction, 0.9 * attract + (0.6 / 5) * repulse, rtol=1e-12)


def test_combine_forces_permutation_equivariant_bitwise():
    rng = np.random.default_rng(8)
    particles = rng.normal(size=(6, 2))
    grads = rng.normal(size=(6, 2))
    kern = RbfKernel(1.1)
    direction, attract, repulse = combine_forces(particles, grads, kern, alpha=1.0)
    perm = rng.permutation(6)
    d2, a2, r2 = combine_forces(particles[perm], grads[perm], kern, alpha=1.0)
    np.testing.assert_array_equal(d2, direction[perm])
    np.testing.assert_array_equal(a2, attract[perm])
    np.testing.assert_array_equal(r2, repulse[perm])


def test_anneal_factor_schedule():
    assert anneal_factor(0, 100, cycles=4, power=2.0) == 0.0
    assert anneal_factor(12, 100, cycles=4, power=2.0) == pytest.approx((12 / 25) ** 2, rel=1e-15)
    assert anneal_factor(25, 100, cycles=4, power=2.0) == 0.0  # new cycle restarts
    assert anneal_factor(99, 100, cycles=4, power=2.0) == 1.0  # pinned final step
    assert anneal_factor(10, 40, cycles=1, power=1.0) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        anneal_factor(100, 100)
    with pytest.raises(ValueError):
        anneal_factor(-1, 100)


def test_check_convergence_detects_flattened_force():
    rising_tail = [1.0] * 350 + [2.0] * 35
    assert check_convergence(rising_tail)
    decreasing = list(np.linspace(5.0, 0.1, 400))
    assert not check_convergence(decreasing)
    assert not check_convergence([1.0, 2.0, 3.0])  # shorter than the slow window


def test_init_particles_bounds_and_determinism():
    config = RunConfig("smi", 4, 10, 0.1, init_low=-2.0, init_high=0.5)
    guide = GaussianGuide(3)
    a = init_particles(config, guide, seed=13)
    b = init_particles(config, guide, seed=13)
    assert a.shape == (4, 6)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= -2.0 and a.max() <= 0.5
    assert not np.array_equal(a, init_particles(config, guide, seed=14))


def test_run_inference_records_and_determinism():
    model = GaussianTarget(2)
    guide = PointMassGuide(2)
    config = RunConfig("svgd", 5, 40, 0.05, optimizer="adam", init_low=-3, init_high=3)
    res1 = run_inference(model, guide, config, seed=4)
    res2 = run_inference(model, guide, config, seed=4)
    np.testing.assert_array_equal(res1.particles, res2.particles)
    assert res1.step == 40
    assert len(res1.record.force_norms) == 40
    assert all(np.isnan(res1.record.elbo_estimates))
    assert res1.record.anneal_factors == [1.0] * 40


def test_run_inference_asvgd_uses_schedule():
    model = GaussianTarget(1)
    guide = PointMassGuide(1)
    config = RunConfig("asvgd", 3, 20, 0.05, anneal_cycles=2, init_low=-3, init_high=3)
    res = run_inference(model, guide, config, seed=4)
    want = [anneal_factor(s, 20, 2, 2.0) for s in range(20)]
    assert res.record.anneal_factors == want


def test_run_inference_rejects_mismatched_guide():
    model = GaussianTarget(2)
    with pytest.raises(ValueError):
        run_inference(model, GaussianGuide(2), RunConfig("svgd", 3, 5, 0.1), seed=0)


def test_run_inference_convergence_stops_early():
    model = GaussianTarget(2, variance=1.0)
    guide = PointMassGuide(2)
    config = RunConfig(
        "svgd", 8, 3000, 0.2, optimizer="adagrad", use_convergence=True,
        convergence_fast=5, convergence_slow=50, init_low=-6, init_high=6,
    )
    res = run_inference(model, guide, config, seed=2)
    assert res.record.converged_at is not None
    assert res.step == res.record.converged_at < 3000
    assert len(res.record.force_norms) == res.step


def test_run_inference_raises_numerical_failure():
    model = GaussianTarget(1)
    guide = PointMassGuide(1)
    config = RunConfig("svgd", 2, 50, 1e160, optimizer="sgd", init_low=1.0, init_high=2.0)
    with pytest.raises(NumericalFailure) as info:
        run_inference(model, guide, config, seed=0)
    assert info.value.step is not None


def test_minibatch_runs_are_deterministic_and_batch_size_caps():
    model = _conjugate_model()  # three observations
    guide = GaussianGuide(1)
    config = RunConfig("smi", 2, 25, 0.05, optimizer="adagrad", n_elbo_draws=4, batch_size=2)
    a = run_inference(model, guide, config, seed=6)
    b = run_inference(model, guide, config, seed=6)
    np.testing.assert_array_equal(a.particles, b.particles)
    # a batch size covering the dataset behaves exactly like full batches
    big = RunConfig("smi", 2, 25, 0.05, optimizer="adagrad", n_elbo_draws=4, batch_size=3)
    full = RunConfig("smi", 2, 25, 0.05, optimizer="adagrad", n_elbo_draws=4)
    np.testing.assert_array_equal(
        run_inference(model, guide, big, seed=6).particles,
        run_inference(model, guide, full, seed=6).particles,
    )


def test_ovi_and_map_steps_match_manual_updates():
    model = _conjugate_model()
    guide = GaussianGuide(1)
    psi = np.array([0.4, 0.1])
    opt = make_optimizer("adagrad", 0.05)
    manual_grads, _ = mixture_grads(model, guide, psi[None, :], 6, seed=3, step=0)
    want = psi + make_optimizer("adagrad", 0.05).update(manual_grads[0])
    np.testing.assert_array_equal(ovi_step(psi, model, guide, opt, 6, seed=3, step=0), want)

    theta = np.array([0.9])
    opt2 = make_optimizer("adam", 0.01)
    want2 = theta + make_optimizer("adam", 0.01).update(model.grad_log_joint(theta))
    np.testing.assert_array_equal(map_step(theta, model, opt2), want2)


def test_elbo_estimate_point_mass_rejected():
    model = GaussianTarget(1)
    with pytest.raises(ValueError):
        elbo_estimate(model, PointMassGuide(1), np.zeros((2, 1)), 4, seed=0)


@pytest.mark.parametrize(
    "method,guide_kind,optimizer",
    [("svgd", "point", "adam"), ("smi", "gauss", "adagrad")],
)
def test_checkpoint_resume_is_bitwise(tmp_path, method, guide_kind, optimizer):
    # asvgd is excluded: its anneal schedule depends on the final horizon,
    # so extending a run is deliberately not equivalent to a longer run
    model = GaussianTarget(2, mean=0.2)
    guide = PointMassGuide(2) if guide_kind == "point" else GaussianGuide(2)
    config = RunConfig(method, 3, 30, 0.05, optimizer=optimizer, n_elbo_draws=5, init_low=-2, init_high=2)
    straight = run_inference(model, guide, config, seed=8)

    half = run_inference(model, guide, RunConfig(**{**config.__dict__, "max_steps": 15}), seed=8)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, half)
    resumed = resume_from_checkpoint(path, model, guide, max_steps=30)
    np.testing.assert_array_equal(resumed.particles, straight.particles)
    assert resumed.record.force_norms == straight.record.force_norms
    assert resumed.step == straight.step


def test_resume_rejects_unknown_format(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "something-else"}')
    with pytest.raises(ValueError):
        resume_from_checkpoint(path, GaussianTarget(1), PointMassGuide(1))
