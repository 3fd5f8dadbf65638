from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, no_grad


def analytic_grads(fn: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``fn`` rebuilds the scalar output from ``params`` on every call. When
    ``max_coords`` is given, that many coordinates are drawn at random (at
    least one per parameter tensor) instead of sweeping all of them.
    """
    grads = analytic_grads(fn, params)
    coords: list[tuple[int, int]] = []
    for i, p in enumerate(params):
        coords.extend((i, j) for j in range(p.size))
    if max_coords is not None and len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        picked = {(i, int(rng.integers(p.size))) for i, p in enumerate(params) if p.size}
        rest = max(0, max_coords - len(picked))
        extra = rng.choice(len(coords), size=rest, replace=False)
        picked.update(coords[k] for k in extra)
        coords = sorted(picked)
    worst = 0.0
    with no_grad():
        for i, j in coords:
            flat = params[i].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + step
            up = float(fn().data)
            flat[j] = orig - step
            down = float(fn().data)
            flat[j] = orig
            numeric = (up - down) / (2.0 * step)
            analytic = grads[i].reshape(-1)[j]
            worst = max(worst, abs(analytic - numeric) / max(1.0, abs(analytic)))
    return worst
