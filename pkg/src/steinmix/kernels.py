"""RBF kernel and the median-distance bandwidth heuristic."""

from __future__ import annotations

import numpy as np

BANDWIDTH_FLOOR = 1e-8


class RbfKernel:
    """Gaussian kernel k(x, y) = exp(-||x - y||^2 / h).

    ``h`` is the squared-distance scale directly; there is no extra factor
    of two in the exponent's denominator.
    """

    def __init__(self, bandwidth: float):
        if not np.isfinite(bandwidth) or bandwidth <= 0.0:
            raise ValueError(f"bandwidth must be positive and finite, got {bandwidth}")
        self.bandwidth = float(bandwidth)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> float:
        x, y = self._check_pair(x, y)
        d = x - y
        return float(np.exp(-(d @ d) / self.bandwidth))

    def grad_first(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Gradient of k with respect to its first argument."""
        x, y = self._check_pair(x, y)
        d = x - y
        return (-2.0 / self.bandwidth) * d * np.exp(-(d @ d) / self.bandwidth)

    def pairwise(self, points: np.ndarray) -> np.ndarray:
        """Kernel matrix K[i, j] = k(points[i], points[j])."""
        points = np.asarray(points, dtype=np.float64)
        sq = _pairwise_sq_dists(points)
        return np.exp(-sq / self.bandwidth)

    def grad_first_sum(self, points: np.ndarray, kmat: np.ndarray | None = None) -> np.ndarray:
        """Rows sum_i grad_first(points[i], points[j]) for every j.

        This is the repulsive direction of a kernelized particle update.
        Passing a precomputed ``pairwise`` matrix avoids recomputing it.
        """
        points = np.asarray(points, dtype=np.float64)
        if kmat is None:
            kmat = self.pairwise(points)
        # sum_i -(2/h)(x_i - x_j) k_ij = (2/h)(x_j * colsum_j - K^T x)
        colsum = kmat.sum(axis=0)
        return (2.0 / self.bandwidth) * (points * colsum[:, None] - kmat.T @ points)

    @staticmethod
    def _check_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError(f"kernel arguments must be equal-length vectors, got {x.shape} and {y.shape}")
        return x, y


def median_bandwidth(points: np.ndarray) -> float:
    """med^2 / max(ln m, 1) over pairwise Euclidean distances.

    A single particle gives 1.0, and fully coincident ensembles are floored
    at a small positive value so downstream kernels stay well defined.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be a (m, dim) matrix, got shape {points.shape}")
    m = points.shape[0]
    if m < 1:
        raise ValueError("points must contain at least one row")
    if m == 1:
        return 1.0
    sq = _pairwise_sq_dists(points)
    iu = np.triu_indices(m, k=1)
    med = float(np.median(np.sqrt(sq[iu])))
    h = med * med / max(np.log(m), 1.0)
    return max(h, BANDWIDTH_FLOOR)


def _pairwise_sq_dists(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)
