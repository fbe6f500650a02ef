"""From-scratch first-order optimizers (ascent convention).

``update(grad)`` returns the increment to ADD to the parameters.  State is
lazily shaped from the first gradient and serializes to plain dicts so a
run can checkpoint and resume exactly.
"""

from __future__ import annotations

import numpy as np


class Sgd:
    kind = "sgd"

    def __init__(self, step_size: float):
        if step_size <= 0:
            raise ValueError(f"step_size must be positive, got {step_size}")
        self.step_size = float(step_size)

    def update(self, grad: np.ndarray) -> np.ndarray:
        return self.step_size * np.asarray(grad, dtype=np.float64)

    def state(self) -> dict:
        return {"kind": self.kind, "step_size": self.step_size}

    def load_state(self, state: dict):
        self.step_size = float(state["step_size"])


class Adam:
    """Adam with bias correction; eps sits outside the square root."""

    kind = "adam"

    def __init__(self, step_size: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if step_size <= 0:
            raise ValueError(f"step_size must be positive, got {step_size}")
        self.step_size = float(step_size)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = None
        self.v = None

    def update(self, grad: np.ndarray) -> np.ndarray:
        grad = np.asarray(grad, dtype=np.float64)
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1**self.t)
        vhat = self.v / (1.0 - self.beta2**self.t)
        return self.step_size * mhat / (np.sqrt(vhat) + self.eps)

    def state(self) -> dict:
        return {
            "kind": self.kind,
            "step_size": self.step_size,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": None if self.m is None else self.m.tolist(),
            "v": None if self.v is None else self.v.tolist(),
        }

    def load_state(self, state: dict):
        self.step_size = float(state["step_size"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        self.t = int(state["t"])
        self.m = None if state["m"] is None else np.asarray(state["m"], dtype=np.float64)
        self.v = None if state["v"] is None else np.asarray(state["v"], dtype=np.float64)


class Adagrad:
    """Adagrad with a zero-initialized accumulator."""

    kind = "adagrad"

    def __init__(self, step_size: float, eps: float = 1e-10):
        if step_size <= 0:
            raise ValueError(f"step_size must be positive, got {step_size}")
        self.step_size = float(step_size)
        self.eps = float(eps)
        self.acc = None

    def update(self, grad: np.ndarray) -> np.ndarray:
        grad = np.asarray(grad, dtype=np.float64)
        if self.acc is None:
            self.acc = np.zeros_like(grad)
        self.acc = self.acc + grad * grad
        return self.step_size * grad / (np.sqrt(self.acc) + self.eps)

    def state(self) -> dict:
        return {
            "kind": self.kind,
            "step_size": self.step_size,
            "eps": self.eps,
            "acc": None if self.acc is None else self.acc.tolist(),
        }

    def load_state(self, state: dict):
        self.step_size = float(state["step_size"])
        self.eps = float(state["eps"])
        self.acc = None if state["acc"] is None else np.asarray(state["acc"], dtype=np.float64)


_KINDS = {"sgd": Sgd, "adam": Adam, "adagrad": Adagrad}


def make_optimizer(kind: str, step_size: float):
    if kind not in _KINDS:
        raise ValueError(f"unknown optimizer {kind!r}; choose from {sorted(_KINDS)}")
    return _KINDS[kind](step_size)


def optimizer_from_state(state: dict):
    opt = _KINDS[state["kind"]](state["step_size"])
    opt.load_state(state)
    return opt
