"""SGD with classic momentum and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from ..errors import ConfigError, DimensionError
from .tensor import Parameter


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    total_epochs: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.total_epochs < 1:
            raise ConfigError(f"total_epochs must be positive, got {self.total_epochs}")


def cosine_lr(epoch: int, cfg: OptimizerConfig) -> float:
    """Cosine-annealed learning rate: lr0 at epoch 0, 0 at epoch == total_epochs."""
    if not 0 <= epoch <= cfg.total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {cfg.total_epochs}]")
    return 0.5 * cfg.learning_rate * (1.0 + math.cos(math.pi * epoch / cfg.total_epochs))


def sgd_step(
    params: Iterable[Parameter],
    cfg: OptimizerConfig,
    lr_t: float,
    masks: Mapping[Parameter, np.ndarray] | None = None,
) -> None:
    """One classic-momentum step over all parameters that received a gradient.

    Update law: buf <- momentum * buf + (grad + weight_decay * value);
    value <- value - lr_t * buf.  L2 decay is folded into the gradient and
    Nesterov is off.  For masked parameters the value update is gated so
    pruned entries stay exactly zero; their momentum buffers keep
    integrating, which is what makes momentum-ranked regrowth informative.
    """
    if lr_t < 0:
        raise ConfigError(f"lr_t must be non-negative, got {lr_t}")
    for p in params:
        g = p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        buf = p.momentum
        buf *= cfg.momentum
        buf += g + cfg.weight_decay * p.data
        if lr_t == 0.0:
            continue
        mask = masks.get(p) if masks else None
        if mask is None:
            p.data -= lr_t * buf
        else:
            np.subtract(p.data, lr_t * buf, out=p.data, where=mask)
