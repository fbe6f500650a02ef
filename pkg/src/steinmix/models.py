"""Target models: unnormalized log joints, their gradients, and datasets.

Every model exposes the same surface: ``log_joint(theta, batch)`` and
``grad_log_joint(theta, batch)`` plus row-batched variants, where ``batch``
is either None (use the full dataset) or an index array into the dataset
rows.  A batch of size b contributes its log likelihood scaled by n/b, so
averaging over all size-b batches reproduces the full-data log joint and
minibatch gradients are unbiased.

Gradients are hand-written; the tests check every model against central
finite differences.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import expit

from .guides import softplus
from .streams import TAG_DATA, substream

LOG_2PI = math.log(2.0 * math.pi)

WAVE_CLUSTERS = ((-1.5, -0.5), (1.3, 1.7))


class NumericalFailure(RuntimeError):
    """A computation produced a non-finite value; carries the offending state."""

    def __init__(self, message: str, theta: np.ndarray | None = None, step: int | None = None):
        super().__init__(message)
        self.theta = theta
        self.step = step


@dataclass(frozen=True)
class Dataset:
    """Paired inputs (n, p) and targets (n, q)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        if inputs.ndim != 2 or targets.ndim != 2:
            raise ValueError(f"inputs and targets must be 2-d, got {inputs.shape} and {targets.shape}")
        if inputs.shape[0] != targets.shape[0]:
            raise ValueError(f"inputs and targets disagree on row count: {inputs.shape[0]} vs {targets.shape[0]}")
        if inputs.shape[0] < 1:
            raise ValueError("dataset must contain at least one row")
        if not (np.isfinite(inputs).all() and np.isfinite(targets).all()):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def p(self) -> int:
        return self.inputs.shape[1]

    @property
    def q(self) -> int:
        return self.targets.shape[1]


def _check_thetas(thetas: np.ndarray, dim: int) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.ndim != 2 or thetas.shape[1] != dim:
        raise ValueError(f"thetas must be (n, {dim}), got {thetas.shape}")
    return thetas


def _check_finite(values: np.ndarray, thetas: np.ndarray, what: str):
    bad = ~np.isfinite(np.asarray(values))
    if bad.any():
        idx = int(np.argwhere(bad)[0][0])
        raise NumericalFailure(f"non-finite {what} at row {idx}", theta=thetas[idx])


class _BatchedModel:
    """Shared scalar wrappers over the row-batched implementations."""

    latent_dim: int

    def log_joint(self, theta: np.ndarray, batch: np.ndarray | None = None) -> float:
        return float(self.log_joint_many(np.asarray(theta, dtype=np.float64)[None, :], batch)[0])

    def grad_log_joint(self, theta: np.ndarray, batch: np.ndarray | None = None) -> np.ndarray:
        return self.grad_log_joint_many(np.asarray(theta, dtype=np.float64)[None, :], batch)[0]

    @property
    def n_data(self) -> int:
        return 0

    def _batch_scale(self, batch: np.ndarray | None) -> tuple[np.ndarray | slice, float]:
        n = self.n_data
        if batch is None:
            return slice(None), 1.0
        if n == 0:
            raise ValueError("model has no dataset; batch must be None")
        batch = np.asarray(batch)
        if batch.ndim != 1 or batch.size < 1 or not np.issubdtype(batch.dtype, np.integer):
            raise ValueError(f"batch must be a non-empty 1-d integer array, got {batch!r}")
        if batch.min() < 0 or batch.max() >= n:
            raise ValueError(f"batch indices must lie in [0, {n}), got range [{batch.min()}, {batch.max()}]")
        return batch, n / batch.size


class GaussianTarget(_BatchedModel):
    """Isotropic Gaussian log density, used as a data-free target."""

    def __init__(self, latent_dim: int, mean: float = 0.0, variance: float = 1.0):
        if latent_dim < 1:
            raise ValueError(f"latent_dim must be >= 1, got {latent_dim}")
        if variance <= 0:
            raise ValueError(f"variance must be positive, got {variance}")
        self.latent_dim = int(latent_dim)
        self.mean = float(mean)
        self.variance = float(variance)
        self.dataset = None

    def log_joint_many(self, thetas: np.ndarray, batch: np.ndarray | None = None) -> np.ndarray:
        thetas = _check_thetas(thetas, self.latent_dim)
        self._batch_scale(batch)
        d = thetas - self.mean
        out = -0.5 * self.latent_dim * (LOG_2PI + math.log(self.variance)) - 0.5 * np.einsum("nd,nd->n", d, d) / self.variance
        _check_finite(out, thetas, "log joint")
        return out

    def grad_log_joint_many(self, thetas: np.ndarray, batch: np.ndarray | None = None) -> np.ndarray:
        thetas = _check_thetas(thetas, self.latent_dim)
        self._batch_scale(batch)
        out = -(thetas - self.mean) / self.variance
        _check_finite(out, thetas, "gradient")
        return out


class NormalLocationModel(_BatchedModel):
    """Normal observations with unknown mean and known noise scale.

    Conjugacy gives the exact posterior and the exact model evidence, which
    anchor the bound checks on the mixture objective.
    """

    latent_dim = 1

    def __init__(self, data: np.ndarray, prior_mean: float = 0.0, prior_sd: float = 1.0, noise_sd: float = 1.0):
        data = np.asarray(data, dtype=np.float64).reshape(-1)
        if data.size < 1 or not np.isfinite(data).all():
            raise ValueError("data must be a non-empty finite vector")
        if prior_sd <= 0 or noise_sd <= 0:
            raise ValueError("prior_sd and noise_sd must be positive")
        self.data = data
        self.prior_mean = float(prior_mean)
        self.prior_sd = float(prior_sd)
        self.noise_sd = float(noise_sd)
        self.dataset = Dataset(data[:, None], data[:, None])

    @property
    def n_data(self) -> int:
        return self.data.size

    def log_joint_many(self, thetas: np.ndarray, batch: np.ndarray | None = None) -> np.ndarray:
        thetas = _check_thetas(thetas, 1)
        rows, scale = self._batch_scale(batch)
        x = self.data[rows]
        mu = thetas[:, 0]
        lp = -0.5 * (LOG_2PI + 2 * math.log(self.prior_sd)) - 0.5 * ((mu - self.prior_mean) / self.prior_sd) ** 2
        resid = x[None, :] - mu[:, None]
        ll = -0.5 * x.size * (LOG_2PI + 2 * math.log(self.noise_sd)) - 0.5 * (resid**2).sum(axis=1) / self.noise_sd**2
        out = lp + scale * ll
        _check_finite(out, thetas, "log joint")
        return out

    def grad_log_joint_many(self, thetas: np.ndarray, batch: np.ndarray | None = None) -> np.ndarray:
        thetas = _check_thetas(thetas, 1)
        rows, scale = self._batch_scale(batch)
        x = self.data[rows]
        mu = thetas[:, 0]
        g = -(mu - self.prior_mean) / self.prior_sd**2 + scale * (x.sum() - x.size * mu) / self.noise_sd**2
        out = g[:, None]
        _check_finite(out, thetas, "gradient")
        return out

    def posterior(self) -> tuple[float, float]:
        """Exact posterior mean and standard deviation."""
        prec = 1.0 / self.prior_sd**2 + self.n_data / self.noise_sd**2
        mean = (self.prior_mean / self.prior_sd**2 + self.data.sum() / self.noise_sd**2) / prec
        return mean, math.sqrt(1.0 / prec)

    def log_evidence(self) -> float:
        """Exact log marginal likelihood, accumulated one observation at a time."""
        out = 0.0
        m, v = self.prior_mean, self.prior_sd**2
        for x in self.data:
            out += -0.5 * math.log(2.0 * math.pi * (self.noise_sd**2 + v)) - 0.5 * (x - m) ** 2 / (self.noise_sd**2 + v)
            prec = 1.0 / v + 1.0 / self.noise_sd**2
            m = (m / v + x / self.noise_sd**2) / prec
            v = 1.0 / prec
        return out


class BnnRegressionModel(_BatchedModel):
    """Single-hidden-layer regression network with standard-normal weight priors.

    The latent vector packs [W1 (p x H), b1, W2 (H x q), b2] row-major, plus
    one trailing raw-precision coordinate when the noise precision is latent.
    A latent precision gets a Gamma(1, 0.1) prior through a softplus
    transform, with the change-of-variables correction included in the log
    joint; otherwise observations use the fixed ``noise_sigma``.
    """

    def __init__(
        self,
        dataset: Dataset,
        hidden_dim: int,
        activation: str = "tanh",
        noise_sigma: float | None = 0.1,
        latent_precision: bool = False,
    ):
        if hidden_dim < 1:
            raise ValueError(f"hidden_dim must be >= 1, got {hidden_dim}")
        if activation not in ("tanh", "relu"):
            raise ValueError(f"activation must be 'tanh' or 'relu', got {activation!r}")
        if latent_precision:
            if noise_sigma is not None:
                raise ValueError("latent_precision and noise_sigma are mutually exclusive")
        elif noise_sigma is None or noise_sigma <= 0:
            raise ValueError(f"noise_sigma must be positive, got {noise_sigma}")
        self.dataset = dataset
        self.hidden_dim = int(hidden_dim)
        self.activation = activation
        self.noise_sigma = None if latent_precision else float(noise_sigma)
        self.latent_precision = bool(latent_precision)
        p, q, h = dataset.p, dataset.q, self.hidden_dim
        self._sizes = (p * h, h, h * q, q)
        self.n_weights = sum(self._sizes)
        self.latent_dim = self.n_weights + (1 if latent_precision else 0)
        self.prec_prior_rate = 0.1

    @property
    def n_data(self) -> int:
        return self.dataset.n

    def _unpack(self, thetas: np.ndarray):
        p, q, h = self.dataset.p, self.dataset.q, self.hidden_dim
        s = np.cumsum((0,) + self._sizes)
        w1 = thetas[:, s[0] : s[1]].reshape(-1, p, h)
        b1 = thetas[:, s[1] : s[2]]
        w2 = thetas[:, s[2] : s[3]].reshape(-1, h, q)
        b2 = thetas[:, s[3] : s[4]]
        return w1, b1, w2, b2

    def _act(self, a: np.ndarray) -> np.ndarray:
        return np.tanh(a) if self.activation == "tanh" else np.maximum(a, 0.0)

    def _act_consume(self, a: np.ndarray) -> np.ndarray:
        """Activation written over its input (callers that no longer need a)."""
        if self.activation == "tanh":
            return np.tanh(a, out=a)
        return np.maximum(a, 0.0, out=a)

    def _act_grad(self, a: np.ndarray, hidden: np.ndarray) -> np.ndarray:
        return 1.0 - hidden * hidden if self.activation == "tanh" else (a > 0.0).astype(np.float64)

    def predict(self, thetas: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        """Network outputs, shape (n_thetas, n_inputs, q)."""
        thetas = _check_thetas(thetas, self.latent_dim)
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[1] != self.dataset.p:
            raise ValueError(f"inputs must be (n, {self.dataset.p}), got {inputs.shape}")
        w1, b1, w2, b2 = self._unpack(thetas)
        if self.dataset.p == 1:
            a1 = inputs[:, 0][None, :, None] * w1[:, 0, :][:, None, :]
        else:
            a1 = np.matmul(inputs[None], w1)
        a1 += b1[:, None, :]
        hidden = self._act_consume(a1)
        out = np.matmul(hidden, w2)
        out += b2[:, None, :]
        return out

    def noise_sigmas(self, thetas: np.ndarray) -> np.ndarray:
        """Observation noise scale per theta row."""
        thetas = _check_thetas(thetas, self.latent_dim)
        if not self.latent_precision:
            return np.full(thetas.shape[0], self.noise_sigma)
        return 1.0 / np.sqrt(softplus(thetas[:, -1]))

    def log_joint_many(self, thetas: np.ndarray, batch: np.ndarray | None = None) -> np.ndarray:
        thetas = _check_thetas(thetas, self.latent_dim)
        rows, scale = self._batch_scale(batch)
        x, y = self.dataset.inputs[rows], self.dataset.targets[rows]
        w = thetas[:, : self.n_weights]
        lp = -0.5 * self.n_weights * LOG_2PI - 0.5 * np.einsum("nd,nd->n", w, w)
        f = self.predict(thetas, x)
        ssr = np.einsum("nNq,nNq->n", y[None] - f, y[None] - f)
        cells = y.size
        if self.latent_precision:
            raw = thetas[:, -1]
            prec = softplus(raw)
            ll = 0.5 * cells * (np.log(prec) - LOG_2PI) - 0.5 * prec * ssr
            lp += math.log(self.prec_prior_rate) - self.prec_prior_rate * prec + np.log(expit(raw))
        else:
            ll = -0.5 * cells * (LOG_2PI + 2 * math.log(self.noise_sigma)) - 0.5 * ssr / self.noise_sigma**2
        out = lp + scale * ll
        _check_finite(out, thetas, "log joint")
        return out

    def grad_log_joint_many(self, thetas: np.ndarray, batch: np.ndarray | None = None) -> np.ndarray:
        thetas = _check_thetas(thetas, self.latent_dim)
        rows, scale = self._batch_scale(batch)
        x, y = self.dataset.inputs[rows], self.dataset.targets[rows]
        w1, b1, w2, b2 = self._unpack(thetas)
        a1 = np.einsum("Np,nph->nNh", x, w1) + b1[:, None, :]
        hidden = self._act(a1)
        f = np.einsum("nNh,nhq->nNq", hidden, w2) + b2[:, None, :]
        resid = y[None] - f
        if self.latent_precision:
            raw = thetas[:, -1]
            prec = softplus(raw)
            inv_var = prec[:, None, None]
        else:
            inv_var = 1.0 / self.noise_sigma**2
        delta_out = scale * inv_var * resid
        dw2 = np.einsum("nNh,nNq->nhq", hidden, delta_out)
        db2 = delta_out.sum(axis=1)
        delta_h = np.einsum("nNq,nhq->nNh", delta_out, w2) * self._act_grad(a1, hidden)
        dw1 = np.einsum("Np,nNh->nph", x, delta_h)
        db1 = delta_h.sum(axis=1)
        n = thetas.shape[0]
        pieces = [dw1.reshape(n, -1), db1, dw2.reshape(n, -1), db2]
        grad = np.concatenate(pieces, axis=1) - thetas[:, : self.n_weights]
        if self.latent_precision:
            ssr = np.einsum("nNq,nNq->n", resid, resid)
            sig = expit(raw)
            dll_dprec = 0.5 * y.size / prec - 0.5 * ssr
            draw = scale * dll_dprec * sig - self.prec_prior_rate * sig + (1.0 - sig)
            grad = np.concatenate([grad, draw[:, None]], axis=1)
        _check_finite(grad, thetas, "gradient")
        return grad


def wave_mean(x: np.ndarray) -> np.ndarray:
    """Mean response of the synthetic wave: 1.5 sin(2 pi (x + 2/3)) + 3 x + 1."""
    x = np.asarray(x, dtype=np.float64)
    return 1.5 * np.sin(2.0 * np.pi * (x + 2.0 / 3.0)) + 3.0 * x + 1.0


def sample_interval_union(intervals, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws over a union of disjoint intervals (length-weighted)."""
    intervals = [(float(a), float(b)) for a, b in intervals]
    if any(b <= a for a, b in intervals):
        raise ValueError(f"intervals must have positive length, got {intervals}")
    lengths = np.array([b - a for a, b in intervals])
    which = rng.choice(len(intervals), size=n, p=lengths / lengths.sum())
    u = rng.uniform(size=n)
    lo = np.array([intervals[i][0] for i in which])
    hi = np.array([intervals[i][1] for i in which])
    return lo + u * (hi - lo)


def generate_wave_dataset(
    n_per_cluster: int,
    seed: int,
    clusters=WAVE_CLUSTERS,
    noise_sigma: float = 0.1,
) -> Dataset:
    """Noisy wave observations, ``n_per_cluster`` uniform draws from each cluster."""
    if n_per_cluster < 1:
        raise ValueError(f"n_per_cluster must be >= 1, got {n_per_cluster}")
    rng = substream(seed, TAG_DATA)
    xs = np.concatenate([rng.uniform(a, b, size=n_per_cluster) for a, b in clusters])
    ys = wave_mean(xs) + noise_sigma * rng.standard_normal(xs.size)
    return Dataset(xs[:, None], ys[:, None])


def generate_wave_eval(intervals, n: int, seed: int, noise_sigma: float = 0.1, unit: int = 1) -> Dataset:
    """Held-out wave data drawn uniformly over a region (a union of intervals).

    ``unit`` separates the streams of distinct evaluation regions (unit 0 is
    the training stream and must not be reused here).
    """
    if unit < 1:
        raise ValueError(f"unit must be >= 1 to stay off the training stream, got {unit}")
    rng = substream(seed, TAG_DATA, unit=unit)
    xs = np.sort(sample_interval_union(intervals, n, rng))
    ys = wave_mean(xs) + noise_sigma * rng.standard_normal(n)
    return Dataset(xs[:, None], ys[:, None])


def load_csv_dataset(path, target_column: str, standardize_inputs: bool = True) -> Dataset:
    """Read a numeric CSV with a header row into a Dataset.

    The named target column becomes the (single) output; the remaining
    columns are the inputs, optionally shifted and scaled to zero mean and
    unit (population) standard deviation.  Near-constant columns are left
    centered but unscaled.  Malformed cells are reported with their row and
    column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: file is empty") from None
        header = [c.strip() for c in header]
        if target_column not in header:
            raise ValueError(f"{path}: no column named {target_column!r} in header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            vals = []
            for col, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ValueError(f"{path}: row {lineno}, column {col!r}: could not parse {cell.strip()!r} as a number") from None
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=np.float64)
    t = header.index(target_column)
    targets = table[:, [t]]
    inputs = np.delete(table, t, axis=1)
    if inputs.shape[1] == 0:
        raise ValueError(f"{path}: no input columns besides the target")
    if standardize_inputs:
        mean = inputs.mean(axis=0)
        sd = inputs.std(axis=0)
        inputs = (inputs - mean) / np.maximum(sd, 1e-12)
    return Dataset(inputs, targets)


def minibatch_expectation_check(model, theta: np.ndarray, batch_size: int) -> tuple[float, float]:
    """Average the scaled log joint over every size-b batch and pair it with
    the full-data value; the two agree up to float roundoff."""
    n = model.n_data
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    theta = np.asarray(theta, dtype=np.float64)
    vals = [model.log_joint(theta, batch=np.array(idx)) for idx in combinations(range(n), batch_size)]
    return float(np.mean(vals)), model.log_joint(theta)
