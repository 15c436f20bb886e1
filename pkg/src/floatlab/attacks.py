"""L-infinity adversarial example generation: FGSM and PGD-k.

Attacks receive a forward closure (input tensor -> logits tensor) so the
caller decides which conditional path, batch-norm branch, and noise draw the
attack targets.  The closure must be built with constant parameters; only the
perturbed input collects gradients, so an attack can never touch model
parameters or running statistics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor, cross_entropy
from .errors import ConfigError, NumericError

ForwardFn = Callable[[Tensor], Tensor]


@dataclass
class AttackConfig:
    epsilon: float = 8 / 255
    steps: int = 7
    step_size: float = 2 / 255
    random_start: bool = False
    clip_min: float = 0.0
    clip_max: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.steps < 0:
            raise ConfigError(f"steps must be non-negative, got {self.steps}")
        if self.step_size <= 0:
            raise ConfigError(f"step_size must be positive, got {self.step_size}")
        if self.clip_min >= self.clip_max:
            raise ConfigError("empty clip range")

    @property
    def name(self) -> str:
        return f"pgd{self.steps}"


def _input_grad(forward: ForwardFn, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    xt = Tensor(x, requires_grad=True)
    loss = cross_entropy(forward(xt), labels)
    loss.backward()
    g = xt.grad
    if g is None or not np.isfinite(g).all():
        raise NumericError("non-finite input gradient during attack")
    return g


def fgsm(forward: ForwardFn, x: np.ndarray, labels: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Single sign-gradient step: clip(x + epsilon * sign(grad), clip range)."""
    x = np.asarray(x)
    g = _input_grad(forward, x, labels)
    x_hat = x + cfg.epsilon * np.sign(g)
    return np.clip(x_hat, cfg.clip_min, cfg.clip_max)


def pgd_attack(
    forward: ForwardFn,
    x: np.ndarray,
    labels: np.ndarray,
    cfg: AttackConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """k iterations of sign-gradient ascent, each projected back onto the
    epsilon-ball around x and then onto the valid pixel range."""
    x = np.asarray(x)
    lo = x - cfg.epsilon
    hi = x + cfg.epsilon
    if cfg.random_start:
        if rng is None:
            raise ConfigError("random_start requires a seeded generator")
        x_hat = x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape).astype(x.dtype)
        x_hat = np.clip(x_hat, cfg.clip_min, cfg.clip_max)
    else:
        x_hat = x.copy()
    for _ in range(cfg.steps):
        g = _input_grad(forward, x_hat, labels)
        x_hat = x_hat + cfg.step_size * np.sign(g)
        x_hat = np.clip(x_hat, lo, hi)
        x_hat = np.clip(x_hat, cfg.clip_min, cfg.clip_max)
    return x_hat
