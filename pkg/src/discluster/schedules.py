"""Lambda ramp, learning-rate decay and momentum SGD."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, DimensionError, NonFiniteError, ParameterError


@dataclass(frozen=True)
class ScheduleConfig:
    gamma: float = 10.0
    eta0: float = 0.01
    mu: float = 10.0
    nu: float = 0.75
    momentum: float = 0.9
    weight_decay: float = 1e-4
    classifier_lr_multiplier: float = 10.0
    epochs: int = 200
    batch_size: int = 64

    def __post_init__(self):
        for name in ("gamma", "eta0", "mu", "nu", "batch_size"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.momentum < 0 or self.weight_decay < 0 or self.epochs < 0:
            raise ParameterError("momentum, weight_decay and epochs must be non-negative")
        if self.classifier_lr_multiplier < 1:
            raise ParameterError("classifier_lr_multiplier must be >= 1")


def _check_progress(p: float):
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"training progress must lie in [0, 1], got {p}")


def lambda_at(p: float, gamma: float = 10.0) -> float:
    """Weight of the clustering objective, ramping from 0 towards 1."""
    _check_progress(p)
    return 2.0 / (1.0 + math.exp(-gamma * p)) - 1.0


def lr_at(p: float, eta0: float = 0.01, mu: float = 10.0, nu: float = 0.75) -> float:
    """Classifier learning rate at progress p; the extractor runs at lr / multiplier."""
    _check_progress(p)
    return eta0 * (1.0 + mu * p) ** (-nu)


def group_lrs(p: float, cfg: ScheduleConfig) -> dict[str, float]:
    eta = lr_at(p, cfg.eta0, cfg.mu, cfg.nu)
    return {"classifier": eta, "extractor": eta / cfg.classifier_lr_multiplier}


class SGD:
    """Classical momentum with L2 folded into the gradient.

    v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v
    """

    def __init__(self, params: list[tuple[str, Tensor, str]], momentum: float = 0.9,
                 weight_decay: float = 1e-4):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(t.value) for name, t, _ in params}
        self.steps = 0

    def step(self, lr_per_group: dict[str, float], grads: dict[str, np.ndarray] | None = None):
        values = {name: t.value for name, t, _ in self.params}
        grads = grads or {name: t.grad for name, t, _ in self.params}
        groups = {name: group for name, _, group in self.params}
        for name, t, _ in self.params:
            if grads[name].shape != t.shape:
                raise DimensionError(f"{name}: gradient shape {grads[name].shape} != {t.shape}")
        try:
            values, self.velocity = sgd_step(values, grads, self.velocity, lr_per_group,
                                             self.momentum, self.weight_decay, groups)
        except NonFiniteError as exc:
            raise NonFiniteError(f"step {self.steps}: {exc}") from None
        for name, t, _ in self.params:
            t.value = values[name]
        self.steps += 1

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: v.copy() for name, v in self.velocity.items()}


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             velocity: dict[str, np.ndarray], lr: float | dict[str, float],
             momentum: float = 0.9, weight_decay: float = 1e-4,
             groups: dict[str, str] | None = None):
    """Functional form of one SGD update on plain arrays; returns (params, velocity)."""
    new_p, new_v = {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
        step_lr = lr if not isinstance(lr, dict) else lr[(groups or {}).get(name, name)]
        v = momentum * velocity.get(name, np.zeros_like(p)) + g + weight_decay * p
        new_v[name] = v
        new_p[name] = p - step_lr * v
    return new_p, new_v
