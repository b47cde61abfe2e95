from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tensor import DTYPE, DimensionError, Tensor


@dataclass
class AdamState:
    """Moment buffers and step counter for Adam with bias correction."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
) -> AdamState:
    """Apply one Adam update in place; parameters with a None gradient see a zero gradient."""
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} params but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise DimensionError("optimizer state was built for a different parameter list")
    state.t += 1
    b1, b2 = DTYPE(state.beta1), DTYPE(state.beta2)
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / DTYPE(c1)
        v_hat = v / DTYPE(c2)
        p.data -= (DTYPE(state.lr) * m_hat / (np.sqrt(v_hat) + DTYPE(state.eps))).astype(DTYPE)
    return state
