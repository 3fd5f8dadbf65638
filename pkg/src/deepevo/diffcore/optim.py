from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    skipped: int = 0


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None],
              state: AdamState) -> bool:
    """Apply one bias-corrected Adam update in place.

    Returns False (and leaves everything untouched) when any gradient holds a
    NaN or infinity.
    """
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError(f"optimizer state tracks {len(state.m)} params, got {len(params)}")
    gs = [np.zeros_like(p.data) if g is None else g for p, g in zip(params, grads)]
    for p, g, m in zip(params, gs, state.m):
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
    if not all(np.all(np.isfinite(g)) for g in gs):
        state.skipped += 1
        logger.warning("non-finite gradient; skipped Adam step %d", state.step + 1)
        return False
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, gs, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    @property
    def steps(self) -> int:
        return self.state.step

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> bool:
        return adam_step(self.params, [p.grad for p in self.params], self.state)


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-2):
        self.params = list(params)
        self.lr = lr
        self.steps = 0
        self.skipped = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> bool:
        grads = [p.grad for p in self.params]
        if not all(g is None or np.all(np.isfinite(g)) for g in grads):
            self.skipped += 1
            return False
        for p, g in zip(self.params, grads):
            if g is not None:
                p.data -= self.lr * g
        self.steps += 1
        return True


def make_optimizer(name: str, params: Sequence[Tensor], lr: float):
    if name == "adam":
        return Adam(params, lr=lr)
    if name == "sgd":
        return SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")
