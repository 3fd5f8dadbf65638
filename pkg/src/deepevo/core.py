"""Pieces shared by the GA and GP loops: individuals, counters, run history."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

MINIMIZE = "minimize"
MAXIMIZE = "maximize"


def check_direction(direction: str) -> str:
    if direction not in (MINIMIZE, MAXIMIZE):
        raise ValueError(f"objective direction must be {MINIMIZE!r} or {MAXIMIZE!r}, got {direction!r}")
    return direction


def sort_key(direction: str):
    """Key under which smaller is better."""
    if direction == MINIMIZE:
        return lambda ind: ind.fitness
    return lambda ind: -ind.fitness


@dataclass(eq=False)
class Individual:
    genome: Any
    fitness: float | None = None
    origin: int | None = None  # id of the learned-operator record that produced it

    @property
    def evaluated(self) -> bool:
        return self.fitness is not None


class EvalCounter:
    """Monotone count of fitness-function calls."""

    def __init__(self) -> None:
        self._count = 0

    @property
    def count(self) -> int:
        return self._count

    def increment(self, n: int = 1) -> None:
        if n < 0:
            raise ValueError("evaluation counter cannot go backwards")
        self._count += n

    def __int__(self) -> int:
        return self._count


def tournament_select(population: Sequence[Individual], k: int, rng: np.random.Generator,
                      direction: str = MINIMIZE) -> Individual:
    if not population:
        raise ValueError("tournament selection from an empty population")
    if k < 1:
        raise ValueError(f"tournament size must be >= 1, got {k}")
    picks = rng.integers(0, len(population), size=k)
    key = sort_key(direction)
    return min((population[i] for i in picks), key=key)


@dataclass
class GenerationRecord:
    generation: int
    best_train: float
    mean_train: float
    best_test: float
    cum_seconds: float
    evals: int


@dataclass
class RunHistory:
    rows: list[GenerationRecord] = field(default_factory=list)
    best: Individual | None = None
    stats: dict[str, float] = field(default_factory=dict)

    @property
    def best_fitness(self) -> list[float]:
        return [r.best_train for r in self.rows]

    @property
    def final_best(self) -> float:
        return self.rows[-1].best_train

    @property
    def final_test(self) -> float:
        return self.rows[-1].best_test

    def generation_seconds(self) -> list[float]:
        """Wall-clock time of each generation after the initial one."""
        t = [r.cum_seconds for r in self.rows]
        return [b - a for a, b in zip(t, t[1:])]

    def signature(self) -> list[tuple]:
        """Everything except wall-clock fields, for determinism checks (nan becomes None)."""
        def v(x):
            return None if isinstance(x, float) and math.isnan(x) else x
        return [(r.generation, v(r.best_train), v(r.mean_train), v(r.best_test), r.evals)
                for r in self.rows]


def population_stats(population: Sequence[Individual], direction: str) -> tuple[Individual, float]:
    best = min(population, key=sort_key(direction))
    vals = [ind.fitness for ind in population]
    mean = float(np.mean(vals)) if all(math.isfinite(v) for v in vals) else math.inf
    return best, mean


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from a normalised probability vector."""
    cdf = np.cumsum(probs)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, len(probs) - 1)


def sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Row-wise :func:`sample_index` for an ``(N, k)`` array, one draw per row."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(len(probs)) * cdf[:, -1]
    i = (cdf <= u[:, None]).sum(axis=-1)
    return np.minimum(i, probs.shape[-1] - 1)
