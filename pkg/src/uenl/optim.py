"""SGD with classic momentum, coupled weight decay, and a step schedule.

Update rule per parameter:

    v <- momentum * v - lr * (grad + weight_decay * w)
    w <- w + v

Weight decay is added to the gradient (coupled), so it is also damped by
momentum. The optimizer only ever sees the trainable weights; batchnorm
running statistics must be kept out of the dict passed in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

__all__ = ["OptState", "sgd_step", "lr_at_epoch"]


@dataclass
class OptState:
    """Per-parameter momentum buffers."""

    velocity: dict[str, Tensor]

    @classmethod
    def zeros_like(cls, weights: dict[str, Tensor]) -> "OptState":
        return cls({name: Tensor.zeros(w.shape) for name, w in weights.items()})


def sgd_step(
    weights: dict[str, Tensor],
    grads: dict[str, Tensor | np.ndarray],
    state: OptState,
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 0.0005,
) -> tuple[dict[str, Tensor], OptState]:
    """One optimizer step. Returns new weights and state; inputs are untouched.

    Every weight must have a gradient of matching shape; a non-finite
    gradient aborts the step and names the offending parameter.
    """
    if lr <= 0.0:
        raise ValueError("lr must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    if weight_decay < 0.0:
        raise ValueError("weight_decay must be non-negative")
    missing = sorted(set(weights) - set(grads))
    if missing:
        raise ValueError(f"missing gradient(s) for: {', '.join(missing)}")

    new_weights: dict[str, Tensor] = {}
    new_velocity: dict[str, Tensor] = {}
    for name, w in weights.items():
        g = grads[name]
        g = g.array if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if g.shape != w.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        v = momentum * state.velocity[name].array - lr * (g + weight_decay * w.array)
        new_velocity[name] = Tensor._wrap(v)
        new_weights[name] = Tensor._wrap(w.array + v)
    return new_weights, OptState(new_velocity)


def lr_at_epoch(epoch: int, config) -> float:
    """Stepped learning rate: the base rate divided by 10 for each drop epoch
    already reached. ``config`` needs ``lr`` and ``lr_drop_epochs``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    drops = sum(1 for d in config.lr_drop_epochs if epoch >= d)
    return float(config.lr * (0.1**drops))
