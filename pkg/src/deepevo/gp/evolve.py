"""Generational GP loop for symbolic regression."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..core import (
    MINIMIZE,
    EvalCounter,
    GenerationRecord,
    Individual,
    RunHistory,
    population_stats,
    sort_key,
    tournament_select,
)
from .operators import (
    MAX_SIZE,
    hoist_mutation,
    mixed_mutation,
    point_mutation_gp,
    ramped_half_and_half,
    subtree_crossover,
    subtree_mutation,
)
from .primitives import PrimitiveSet, default_pset
from .tree import GpTree, eval_tree, rmse


@dataclass
class GpConfig:
    population_size: int = 128
    generations: int = 200
    init_depth: tuple[int, int] = (2, 10)
    crossover_prob: float = 0.6
    mutation_prob: float = 0.1
    tournament_size: int = 20
    elitism: int = 1
    max_size: int = MAX_SIZE
    point_rate: float = 0.05
    donor_depth: tuple[int, int] = (1, 4)
    seed: int = 0

    def __post_init__(self):
        for name in ("crossover_prob", "mutation_prob", "point_rate"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.crossover_prob + self.mutation_prob > 1.0 + 1e-12:
            raise ValueError("crossover_prob + mutation_prob must not exceed 1")
        if not 0 <= self.elitism < self.population_size:
            raise ValueError("elitism must lie in [0, population_size)")
        self.init_depth = tuple(self.init_depth)
        self.donor_depth = tuple(self.donor_depth)


class Mutation:
    """Base GP mutation. Learned operators override :meth:`make_mutant` and the hooks."""

    name = "mutation"

    def mutate(self, parent: Individual, rng: np.random.Generator) -> GpTree:
        raise NotImplementedError

    def make_mutant(self, parent: Individual, rng: np.random.Generator):
        return self.mutate(parent, rng), None

    def offspring_evaluated(self, child: Individual) -> None:
        pass

    def end_generation(self) -> None:
        pass

    def stats(self) -> dict[str, float]:
        return {}


class PointMutation(Mutation):
    name = "point"

    def __init__(self, rate: float = 0.05):
        self.rate = rate

    def mutate(self, parent, rng):
        return point_mutation_gp(parent.genome, rng, self.rate)


class SubtreeMutation(Mutation):
    name = "subtree"

    def __init__(self, donor_depth=(1, 4), max_size: int = MAX_SIZE):
        self.donor_depth, self.max_size = donor_depth, max_size

    def mutate(self, parent, rng):
        return subtree_mutation(parent.genome, rng, self.donor_depth, self.max_size)


class HoistMutation(Mutation):
    name = "hoist"

    def mutate(self, parent, rng):
        return hoist_mutation(parent.genome, rng)


class MixedMutation(Mutation):
    name = "mixed"

    def __init__(self, rate: float = 0.05, donor_depth=(1, 4), max_size: int = MAX_SIZE):
        self.rate, self.donor_depth, self.max_size = rate, donor_depth, max_size
        self.counts: dict[str, int] = {}

    def mutate(self, parent, rng):
        return mixed_mutation(parent.genome, rng, self.rate, self.donor_depth, self.max_size,
                              self.counts)

    def stats(self):
        return {f"mixed_{k}": v for k, v in self.counts.items()}


@dataclass
class RegressionTask:
    """Train/test arrays a GP run fits; built from a dataset split."""

    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    pset: PrimitiveSet

    @classmethod
    def from_arrays(cls, X, y, train_idx, test_idx, pset: PrimitiveSet | None = None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(y, dtype=np.float64)
        pset = pset or default_pset(X.shape[1])
        return cls(X[train_idx], y[train_idx], X[test_idx], y[test_idx], pset)

    def train_fitness(self, tree: GpTree) -> float:
        return rmse(eval_tree(tree, self.X_train), self.y_train)

    def test_fitness(self, tree: GpTree) -> float:
        if len(self.y_test) == 0:
            return math.nan
        return rmse(eval_tree(tree, self.X_test), self.y_test)


def gp_evolve(config: GpConfig, task: RegressionTask, mutation: Mutation,
              hooks: Sequence[Callable[[int, list[Individual], RunHistory], None]] = (),
              counter: EvalCounter | None = None) -> RunHistory:
    """Generational GP minimising train RMSE.

    Each non-elite offspring comes from exactly one of: subtree crossover
    (``crossover_prob``), the mutation operator applied to a selected parent
    (``mutation_prob``), or reproduction. All offspring are evaluated once, so
    the evaluation count is ``pop + generations * (pop - elitism)``.
    """
    rng = np.random.default_rng(config.seed)
    counter = counter if counter is not None else EvalCounter()
    key = sort_key(MINIMIZE)
    history = RunHistory()
    start = time.perf_counter()

    def evaluate(inds):
        for ind in inds:
            ind.fitness = task.train_fitness(ind.genome)
            counter.increment()

    def record(gen, pop):
        best, mean = population_stats(pop, MINIMIZE)
        if history.best is None or key(best) < key(history.best):
            history.best = best
        history.rows.append(GenerationRecord(gen, best.fitness, mean, task.test_fitness(best.genome),
                                             time.perf_counter() - start, counter.count))

    trees = ramped_half_and_half(task.pset, config.init_depth, rng, config.population_size,
                                 config.max_size)
    population = [Individual(t) for t in trees]
    evaluate(population)
    record(0, population)
    for hook in hooks:
        hook(0, population, history)

    pc, pm = config.crossover_prob, config.mutation_prob
    k = config.tournament_size
    for gen in range(1, config.generations + 1):
        elites = sorted(population, key=key)[:config.elitism]
        offspring: list[Individual] = []
        while len(elites) + len(offspring) < config.population_size:
            parent = tournament_select(population, k, rng, MINIMIZE)
            u = rng.random()
            origin = None
            if u < pc:
                donor = tournament_select(population, k, rng, MINIMIZE)
                tree = subtree_crossover(parent.genome, donor.genome, rng, config.max_size)
            elif u < pc + pm:
                tree, origin = mutation.make_mutant(parent, rng)
            else:
                tree = parent.genome
            offspring.append(Individual(tree, origin=origin))
        evaluate(offspring)
        for child in offspring:
            mutation.offspring_evaluated(child)
        mutation.end_generation()
        population = elites + offspring
        record(gen, population)
        for hook in hooks:
            hook(gen, population, history)

    history.stats.update(mutation.stats())
    history.stats["evals"] = counter.count
    return history
