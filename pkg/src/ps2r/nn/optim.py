from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.tensors.items()},
                   {k: np.zeros_like(p) for k, p in params.tensors.items()})


def adam_step(params: ModelParams, state: AdamState, t: int, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> None:
    """One bias-corrected Adam update of ``params`` in place from ``params.grads``.

    Weight decay is an L2 term folded into the gradient before the moment updates.
    """
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    for name, g in params.grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in {name}")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, theta in params.tensors.items():
        g = params.grads[name]
        if weight_decay:
            g = g + weight_decay * theta
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
