"""Experiment harness: runs the studies and writes their artifacts.

Each ``run_*`` function takes (config, seed, out_dir), writes metrics.csv
plus any applicable particles.json / predictive.json under out_dir, and
returns a summary dict.  Runs are sequential and every random draw comes
from seeded streams, so rerunning a command reproduces its metric files
byte for byte.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import json

import numpy as np

from .configs import (
    WAVE_REGION_EVAL_SIZES,
    WAVE_REGIONS,
    config_hash,
    version_string,
)
from .engine import RunConfig, run_inference
from .guides import GaussianGuide, PointMassGuide, softplus_inverse
from .metrics import (
    AtLimit,
    dimension_marginal_variance,
    frobenius_to_identity,
    hdi_widths,
    lppd_from_log,
    mixture_frobenius_to_identity,
    mixture_marginal_variance,
    nll_per_point,
    posterior_predictive,
    recovery_median,
    recovery_point,
    rmse,
)
from .models import BnnRegressionModel, Dataset, GaussianTarget, generate_wave_dataset, generate_wave_eval, load_csv_dataset
from .streams import TAG_DATA, TAG_INIT, substream

logger = logging.getLogger("steinmix")

CSV_HEADER = ("experiment", "method", "detail", "seed", "metric", "value", "version", "config_hash")


def _format(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


class MetricsSink:
    """Accumulates metric rows and writes them as a deterministic CSV."""

    def __init__(self, experiment: str, seed: int, config):
        self.experiment = experiment
        self.seed = seed
        self.version = version_string()
        self.config_hash = config_hash(config)
        self.rows: list[tuple] = []

    def add(self, method: str, detail: str, metric: str, value):
        self.rows.append((self.experiment, method, detail, str(self.seed), metric, _format(value), self.version, self.config_hash))

    def write(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            writer.writerows(self.rows)


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    return obj


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonify(payload), fh, sort_keys=True, indent=1)
        fh.write("\n")


def run_variance_experiment(config, seed: int, out_dir) -> dict:
    """Marginal variance of each method on standard Gaussians by dimension."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sink = MetricsSink("variance", seed, config)
    particle_cells = []
    summary: dict = {}
    for dim in config.dims:
        model = GaussianTarget(dim)
        summary[dim] = {}
        for method in config.methods:
            guide = PointMassGuide(dim)
            rc = RunConfig(
                method=method,
                n_particles=config.n_particles,
                max_steps=config.max_steps,
                step_size=config.svgd_step_size,
                optimizer="adam",
                alpha=config.alpha,
                init_low=-config.svgd_init_half_width,
                init_high=config.svgd_init_half_width,
            )
            result = run_inference(model, guide, rc, seed)
            variances = dimension_marginal_variance(result.particles)
            detail = f"dim={dim};m={config.n_particles}"
            sink.add(method, detail, "mean_marginal_variance", variances.mean())
            sink.add(method, detail, "min_marginal_variance", variances.min())
            sink.add(method, detail, "max_marginal_variance", variances.max())
            sink.add(method, detail, "frobenius_to_identity", frobenius_to_identity(result.particles))
            particle_cells.append(
                {"method": method, "detail": detail, "layout": guide.layout(), "particles": result.particles}
            )
            summary[dim][method] = {"mean_marginal_variance": float(variances.mean())}
            logger.info("variance dim=%d method=%s mean marginal variance %.4f", dim, method, variances.mean())
        for m, n_draws in zip(config.smi_particle_counts, config.smi_elbo_draws):
            guide = GaussianGuide(dim)
            init = _guide_init(guide, m, config.smi_loc_init_half_width, config.smi_scale_init, seed)
            rc = RunConfig(
                method="smi",
                n_particles=m,
                max_steps=config.smi_max_steps,
                step_size=config.smi_step_size,
                optimizer="adagrad",
                alpha=config.alpha,
                n_elbo_draws=n_draws,
            )
            result = run_inference(model, guide, rc, seed, init=init)
            variances = mixture_marginal_variance(guide, result.particles)
            detail = f"dim={dim};m={m}"
            sink.add("smi", detail, "mean_marginal_variance", variances.mean())
            sink.add("smi", detail, "min_marginal_variance", variances.min())
            sink.add("smi", detail, "max_marginal_variance", variances.max())
            sink.add("smi", detail, "frobenius_to_identity", mixture_frobenius_to_identity(guide, result.particles))
            particle_cells.append({"method": "smi", "detail": detail, "layout": guide.layout(), "particles": result.particles})
            summary[dim][f"smi[m={m}]"] = {
                "mean_marginal_variance": float(variances.mean()),
                "min_marginal_variance": float(variances.min()),
                "max_marginal_variance": float(variances.max()),
                "frobenius_to_identity": mixture_frobenius_to_identity(guide, result.particles),
            }
            logger.info("variance dim=%d method=smi m=%d mean marginal variance %.4f", dim, m, variances.mean())
    sink.write(out_dir / "metrics.csv")
    write_json(out_dir / "particles.json", {"experiment": "variance", "seed": seed, "cells": particle_cells})
    return summary


def _wave_setup(config):
    train = generate_wave_dataset(config.n_per_cluster, config.data_seed, noise_sigma=config.noise_sigma)
    evals = {}
    for i, (name, intervals) in enumerate(WAVE_REGIONS.items()):
        evals[name] = generate_wave_eval(
            intervals, WAVE_REGION_EVAL_SIZES[name], config.data_seed, noise_sigma=config.noise_sigma, unit=i + 1
        )
    return train, evals


def _reg_guide(method: str, latent_dim: int):
    return GaussianGuide(latent_dim) if method in ("smi", "ovi") else PointMassGuide(latent_dim)


def _guide_init(guide, m: int, loc_half_width: float, scale_init: float, seed: int):
    """Gaussian-guide start: uniform component means, one fixed starting scale.

    Initializing the raw scale coordinates uniformly alongside the means would
    start the guides at softplus(0) ~ 0.69 — far above the observation noise —
    and runs then spend most of their budget walking the scales down through
    high-variance draws.
    """
    rng = substream(seed, TAG_INIT)
    loc = rng.uniform(-loc_half_width, loc_half_width, size=(m, guide.latent_dim))
    raw = np.full((m, guide.latent_dim), softplus_inverse(scale_init))
    return np.concatenate([loc, raw], axis=1)


def _evaluate_regression(model, guide, particles, evals, n_eval_draws: int, seed: int, hdi_mass: float):
    per_region = {}
    for name, ds in evals.items():
        pred = posterior_predictive(model, guide, particles, ds.inputs, n_eval_draws, seed)
        log_dens = pred.log_densities(ds.targets)
        widths = hdi_widths(pred.y_draws(seed)[:, :, 0], hdi_mass)
        per_region[name] = {
            "lppd": lppd_from_log(log_dens),
            "nll_per_point": nll_per_point(log_dens),
            "rmse": rmse(pred.mean_prediction(), ds.targets),
            "mean_hdi_width": float(widths.mean()),
        }
    return per_region


def run_regression1d(config, seed: int, out_dir) -> dict:
    """Wave regression: fit quality and predictive widths per region."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sink = MetricsSink("reg1d", seed, config)
    train, evals = _wave_setup(config)
    grid = np.linspace(-2.0, 2.0, config.grid_points)
    predictive_cells = []
    particle_cells = []
    summary: dict = {}
    for hidden in config.hidden_dims:
        model = BnnRegressionModel(train, hidden, "tanh", noise_sigma=config.noise_sigma)
        summary[hidden] = {}
        for method in config.methods:
            m = 1 if method in ("ovi", "map") else config.n_particles
            steps = config.ovi_max_steps if method == "ovi" else config.max_steps
            guide = _reg_guide(method, model.latent_dim)
            rc = RunConfig(
                method=method,
                n_particles=m,
                max_steps=steps,
                step_size=config.smi_step_size if method in ("smi", "ovi") else config.step_size,
                optimizer="adam",
                n_elbo_draws=config.n_force_draws,
                use_convergence=config.use_convergence,
                init_low=-config.init_half_width,
                init_high=config.init_half_width,
            )
            acc: dict = {}
            for rep in range(config.repeats):
                run_seed = seed + rep
                init = (
                    _guide_init(guide, m, config.init_half_width, config.guide_scale_init, run_seed)
                    if method in ("smi", "ovi")
                    else None
                )
                result = run_inference(model, guide, rc, run_seed, init=init)
                regions = _evaluate_regression(model, guide, result.particles, evals, config.n_eval_draws, run_seed, config.hdi_mass)
                detail_prefix = f"hidden={hidden}"
                for name, metrics_ in regions.items():
                    for metric, value in metrics_.items():
                        sink.add(method, f"{detail_prefix};region={name};repeat={rep}", metric, value)
                    for metric, value in metrics_.items():
                        acc.setdefault(name, {}).setdefault(metric, []).append(value)
                sink.add(method, f"{detail_prefix};repeat={rep}", "steps_run", result.step)
                if rep == 0:
                    pred = posterior_predictive(model, guide, result.particles, grid[:, None], config.n_eval_draws, run_seed)
                    draws = pred.y_draws(run_seed)[:, :, 0]
                    widths_lo_hi = [_hdi_bounds(draws[:, i], config.hdi_mass) for i in range(draws.shape[1])]
                    predictive_cells.append(
                        {
                            "method": method,
                            "hidden": hidden,
                            "seed": run_seed,
                            "mean": pred.mean_prediction()[:, 0],
                            "hdi_low": [lo for lo, _ in widths_lo_hi],
                            "hdi_high": [hi for _, hi in widths_lo_hi],
                        }
                    )
                    particle_cells.append(
                        {
                            "method": method,
                            "detail": f"hidden={hidden};repeat=0",
                            "layout": guide.layout(),
                            "particles": result.particles,
                        }
                    )
                logger.info(
                    "reg1d hidden=%d method=%s repeat=%d steps=%d between-width %.3f",
                    hidden, method, rep, result.step, regions["between"]["mean_hdi_width"],
                )
            summary[hidden][method] = {
                name: {metric: float(np.mean(vals)) for metric, vals in metrics_.items()} for name, metrics_ in acc.items()
            }
    sink.write(out_dir / "metrics.csv")
    write_json(out_dir / "predictive.json", {"experiment": "reg1d", "x_grid": grid, "cells": predictive_cells})
    write_json(out_dir / "particles.json", {"experiment": "reg1d", "seed": seed, "cells": particle_cells})
    return summary


def _hdi_bounds(samples, mass):
    from .metrics import hdi

    return hdi(samples, mass)


def run_recovery(config, seed: int, out_dir) -> dict:
    """Doubling SVGD particle counts until they match a small mixture run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sink = MetricsSink("recovery", seed, config)
    train, evals = _wave_setup(config)
    model = BnnRegressionModel(train, config.hidden_dim, "tanh", noise_sigma=config.noise_sigma)
    region_names = list(WAVE_REGIONS)
    points: dict = {name: [] for name in region_names}
    for trial in range(config.trials):
        trial_seed = seed + trial
        guide = GaussianGuide(model.latent_dim)
        rc = RunConfig(
            method="smi",
            n_particles=config.n_reference_particles,
            max_steps=config.max_steps,
            step_size=config.step_size,
            optimizer=config.optimizer,
            n_elbo_draws=config.n_force_draws,
            use_convergence=config.use_convergence,
            init_low=-config.init_half_width,
            init_high=config.init_half_width,
        )
        init = _guide_init(guide, config.n_reference_particles, config.init_half_width, config.guide_scale_init, trial_seed)
        result = run_inference(model, guide, rc, trial_seed, init=init)
        reference = {
            name: metrics_["lppd"]
            for name, metrics_ in _evaluate_regression(
                model, guide, result.particles, evals, config.n_eval_draws, trial_seed, 0.9
            ).items()
        }
        cache: dict = {}

        def svgd_lppd(n_particles: int) -> dict:
            if n_particles not in cache:
                pm = PointMassGuide(model.latent_dim)
                rc_s = RunConfig(
                    method="svgd",
                    n_particles=n_particles,
                    max_steps=config.max_steps,
                    step_size=config.step_size,
                    optimizer=config.optimizer,
                    use_convergence=config.use_convergence,
                    init_low=-config.init_half_width,
                    init_high=config.init_half_width,
                )
                res = run_inference(model, pm, rc_s, trial_seed)
                cache[n_particles] = {
                    name: metrics_["lppd"]
                    for name, metrics_ in _evaluate_regression(
                        model, pm, res.particles, evals, config.n_eval_draws, trial_seed, 0.9
                    ).items()
                }
                logger.info("recovery trial=%d svgd m=%d lppd %s", trial, n_particles, cache[n_particles])
            return cache[n_particles]

        for name in region_names:
            point = recovery_point(reference[name], lambda m, _n=name: svgd_lppd(m)[_n], config.max_particles)
            points[name].append(point)
            sink.add("svgd-vs-smi", f"region={name};trial={trial}", "recovery_point", str(point) if isinstance(point, AtLimit) else point)
            sink.add("smi", f"region={name};trial={trial}", "lppd", reference[name])
        logger.info("recovery trial=%d points %s", trial, {k: str(v[-1]) for k, v in points.items()})
    summary = {}
    for name in region_names:
        med = recovery_median(points[name])
        summary[name] = {"median": med, "trials": points[name]}
        sink.add("svgd-vs-smi", f"region={name}", "recovery_point_median", str(med) if isinstance(med, AtLimit) else med)
    sink.write(out_dir / "metrics.csv")
    return summary


def run_csvreg(config, seed: int, out_dir) -> dict:
    """UCI-style split/standardize/fit/score pipeline on a user CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sink = MetricsSink("csvreg", seed, config)
    raw = load_csv_dataset(config.path, config.target_column, standardize_inputs=False)
    if raw.n < 2:
        raise ValueError(f"{config.path}: need at least two rows to split")
    rng = substream(seed, TAG_DATA, unit=9)
    perm = rng.permutation(raw.n)
    n_test = max(1, int(round(raw.n * config.test_fraction)))
    if n_test >= raw.n:
        n_test = raw.n - 1
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    mean = raw.inputs[train_idx].mean(axis=0)
    sd = np.maximum(raw.inputs[train_idx].std(axis=0), 1e-12)
    train = Dataset((raw.inputs[train_idx] - mean) / sd, raw.targets[train_idx])
    test = Dataset((raw.inputs[test_idx] - mean) / sd, raw.targets[test_idx])
    model = BnnRegressionModel(train, config.hidden_dim, config.activation, noise_sigma=None, latent_precision=True)
    predictive_cells = []
    particle_cells = []
    summary: dict = {}
    for method in config.methods:
        m = 1 if method in ("ovi", "map") else config.n_particles
        guide = _reg_guide(method, model.latent_dim)
        rc = RunConfig(
            method=method,
            n_particles=m,
            max_steps=config.max_steps,
            step_size=config.step_size,
            optimizer=config.optimizer,
            n_elbo_draws=config.n_force_draws,
            batch_size=config.batch_size,
            use_convergence=config.use_convergence,
            init_low=-config.init_half_width,
            init_high=config.init_half_width,
        )
        init = (
            _guide_init(guide, m, config.init_half_width, config.guide_scale_init, seed)
            if method in ("smi", "ovi")
            else None
        )
        result = run_inference(model, guide, rc, seed, init=init)
        pred = posterior_predictive(model, guide, result.particles, test.inputs, config.n_eval_draws, seed)
        log_dens = pred.log_densities(test.targets)
        detail = f"hidden={config.hidden_dim}"
        sink.add(method, detail, "rmse", rmse(pred.mean_prediction(), test.targets))
        sink.add(method, detail, "nll_per_point", nll_per_point(log_dens))
        sink.add(method, detail, "lppd", lppd_from_log(log_dens))
        sink.add(method, detail, "steps_run", result.step)
        bounds = [_hdi_bounds(col, 0.9) for col in pred.y_draws(seed)[:, :, 0].T]
        predictive_cells.append(
            {
                "method": method,
                "seed": seed,
                "mean": pred.mean_prediction()[:, 0],
                "hdi_low": [lo for lo, _ in bounds],
                "hdi_high": [hi for _, hi in bounds],
            }
        )
        particle_cells.append({"method": method, "detail": detail, "layout": guide.layout(), "particles": result.particles})
        summary[method] = {
            "rmse": rmse(pred.mean_prediction(), test.targets),
            "nll_per_point": nll_per_point(log_dens),
            "steps_run": result.step,
        }
        logger.info("csvreg method=%s rmse %.4f nll %.4f", method, summary[method]["rmse"], summary[method]["nll_per_point"])
    sink.write(out_dir / "metrics.csv")
    write_json(out_dir / "predictive.json", {"experiment": "csvreg", "cells": predictive_cells})
    write_json(out_dir / "particles.json", {"experiment": "csvreg", "seed": seed, "cells": particle_cells})
    return summary
