"""Adam with bias correction, on GradientMap output of the tape."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import GradientMap, Tensor


@dataclass
class AdamState:
    """Per-parameter moment accumulators and the shared step counter."""

    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def init(cls, params: list[Tensor]) -> "AdamState":
        return cls(step=0,
                   m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params])


def adam_step(params: list[Tensor], grads: GradientMap, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update.

    Parameter values are replaced (fresh arrays; prior snapshots stay valid)
    and a new AdamState is returned. A non-finite gradient aborts the whole
    step before any parameter changes.
    """
    if lr <= 0.0:
        raise ValueError(f"adam_step: lr must be positive, got {lr}")
    if len(state.m) != len(params):
        raise ValueError("adam_step: state does not match parameter list")
    gs = []
    for p in params:
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(
                f"adam_step: gradient shape {g.shape} does not match "
                f"parameter {p.name or '<unnamed>'} shape {p.data.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError(
                f"adam_step: non-finite gradient for parameter {p.name or '<unnamed>'}")
        gs.append(g)

    t = state.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new = AdamState(step=t, m=[], v=[])
    for p, g, m, v in zip(params, gs, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        update = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.data.dtype, copy=False)
        new.m.append(m)
        new.v.append(v)
    return new


class Adam:
    """Stateful wrapper tying a parameter list to its AdamState."""

    def __init__(self, params: list[Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState.init(self.params)

    def step(self, grads: GradientMap) -> None:
        self.state = adam_step(self.params, grads, self.state, self.lr,
                               self.beta1, self.beta2, self.eps)
