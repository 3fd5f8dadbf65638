"""Genetic algorithm over fixed-length integer genomes."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import (
    MAXIMIZE,
    MINIMIZE,
    EvalCounter,
    GenerationRecord,
    Individual,
    RunHistory,
    check_direction,
    population_stats,
    sort_key,
    tournament_select,
)

ADAPTIVE_EPS = 1e-9


class Problem(Protocol):
    genome_length: int
    alphabet: int
    direction: str

    def fitness(self, genome: np.ndarray) -> float: ...


@dataclass
class GaConfig:
    population_size: int = 100
    generations: int = 100
    crossover_prob: float = 0.9
    mutation_prob: float = 0.02  # per locus
    tournament_size: int = 5
    elitism: int = 1
    direction: str = MINIMIZE
    seed: int = 0

    def __post_init__(self):
        check_direction(self.direction)
        for name in ("crossover_prob", "mutation_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.population_size < 1 or self.generations < 0:
            raise ValueError("population size must be positive and generations non-negative")
        if not 0 <= self.elitism <= self.population_size:
            raise ValueError(f"elitism must lie in [0, population_size], got {self.elitism}")
        if self.tournament_size < 1:
            raise ValueError("tournament size must be >= 1")


def init_population(config: GaConfig, genome_len: int, alphabet: int,
                    rng: np.random.Generator) -> list[Individual]:
    if genome_len < 1 or alphabet < 1:
        raise ValueError("genome length and alphabet size must be positive")
    genes = rng.integers(0, alphabet, size=(config.population_size, genome_len))
    return [Individual(g.copy()) for g in genes]


def _check_lengths(*genomes: np.ndarray) -> None:
    lengths = {len(g) for g in genomes}
    if len(lengths) != 1:
        raise ValueError(f"parent genomes differ in length: {sorted(lengths)}")


def one_point_crossover(p1: np.ndarray, p2: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    _check_lengths(p1, p2)
    n = len(p1)
    if n < 2:
        return np.array(p1, copy=True)
    cut = int(rng.integers(1, n))
    return np.concatenate([p1[:cut], p2[cut:]])


def equiprobable_uniform(p1: np.ndarray, p2: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    _check_lengths(p1, p2)
    take_first = rng.random(len(p1)) < 0.5
    return np.where(take_first, p1, p2)


def adaptive_weights(f1: float, f2: float, direction: str) -> tuple[float, float]:
    """Inheritance weights: fitness when maximizing, 1/(fitness+eps) when minimizing.

    Non-positive weights are shifted so the smaller one becomes ``eps``.
    """
    if direction == MAXIMIZE:
        w1, w2 = f1, f2
    else:
        w1, w2 = 1.0 / (f1 + ADAPTIVE_EPS), 1.0 / (f2 + ADAPTIVE_EPS)
    low = min(w1, w2)
    if low <= 0:
        w1, w2 = w1 - low + ADAPTIVE_EPS, w2 - low + ADAPTIVE_EPS
    return w1, w2


def adaptive_uniform(p1: Individual, p2: Individual, rng: np.random.Generator,
                     direction: str = MAXIMIZE) -> np.ndarray:
    if not (p1.evaluated and p2.evaluated):
        raise ValueError("adaptive uniform crossover needs evaluated parents")
    _check_lengths(p1.genome, p2.genome)
    w1, w2 = adaptive_weights(p1.fitness, p2.fitness, direction)
    prob_first = w1 / (w1 + w2)
    take_first = rng.random(len(p1.genome)) < prob_first
    return np.where(take_first, p1.genome, p2.genome)


def multiparent_uniform(parents: Sequence[np.ndarray], rng: np.random.Generator) -> np.ndarray:
    if len(parents) < 2:
        raise ValueError("multi-parent crossover needs at least two parents")
    _check_lengths(*parents)
    stack = np.stack(parents)
    pick = rng.integers(0, len(parents), size=stack.shape[1])
    return stack[pick, np.arange(stack.shape[1])]


def ga_point_mutation(genome: np.ndarray, p: float, alphabet: int,
                      rng: np.random.Generator) -> np.ndarray:
    hit = rng.random(len(genome)) < p
    if not hit.any():
        return genome
    out = np.array(genome, copy=True)
    out[hit] = rng.integers(0, alphabet, size=int(hit.sum()))
    return out


class Crossover:
    """Base crossover operator. Subclasses implement :meth:`cross`.

    Learned operators also override :meth:`make_child` (to tag the child with
    a record id) and the two evaluation hooks.
    """

    name = "crossover"
    n_parents = 2

    def cross(self, parents: Sequence[Individual], rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def make_child(self, parents: Sequence[Individual], rng: np.random.Generator):
        return self.cross(parents, rng), None

    def offspring_evaluated(self, child: Individual) -> None:
        pass

    def end_generation(self) -> None:
        pass

    def stats(self) -> dict[str, float]:
        return {}


class OnePoint(Crossover):
    name = "one_point"

    def cross(self, parents, rng):
        return one_point_crossover(parents[0].genome, parents[1].genome, rng)


class EquiprobableUniform(Crossover):
    name = "uniform"

    def cross(self, parents, rng):
        return equiprobable_uniform(parents[0].genome, parents[1].genome, rng)


class AdaptiveUniform(Crossover):
    name = "adaptive_uniform"

    def __init__(self, direction: str = MINIMIZE):
        self.direction = check_direction(direction)

    def cross(self, parents, rng):
        return adaptive_uniform(parents[0], parents[1], rng, self.direction)


class MultiParentUniform(Crossover):
    name = "multiparent_uniform"

    def __init__(self, n_parents: int = 3):
        if n_parents < 2:
            raise ValueError("multi-parent crossover needs at least two parents")
        self.n_parents = n_parents

    def cross(self, parents, rng):
        return multiparent_uniform([p.genome for p in parents], rng)


def evolve(config: GaConfig, problem: Problem, crossover: Crossover,
           hooks: Sequence[Callable[[int, list[Individual], RunHistory], None]] = (),
           counter: EvalCounter | None = None) -> RunHistory:
    """Generational GA with elitism and tournament selection.

    Every non-elite offspring is evaluated exactly once, so the number of
    fitness calls is ``pop + generations * (pop - elitism)`` whatever the
    crossover operator.
    """
    rng = np.random.default_rng(config.seed)
    counter = counter if counter is not None else EvalCounter()
    direction = config.direction
    key = sort_key(direction)
    history = RunHistory()
    start = time.perf_counter()

    def evaluate(inds):
        for ind in inds:
            ind.fitness = float(problem.fitness(ind.genome))
            counter.increment()

    def record(gen, pop):
        best, mean = population_stats(pop, direction)
        if history.best is None or key(best) < key(history.best):
            history.best = best
        history.rows.append(GenerationRecord(gen, best.fitness, mean, float("nan"),
                                             time.perf_counter() - start, counter.count))

    population = init_population(config, problem.genome_length, problem.alphabet, rng)
    evaluate(population)
    record(0, population)
    for hook in hooks:
        hook(0, population, history)

    for gen in range(1, config.generations + 1):
        elites = sorted(population, key=key)[:config.elitism]
        offspring: list[Individual] = []
        while len(elites) + len(offspring) < config.population_size:
            parents = [tournament_select(population, config.tournament_size, rng, direction)
                       for _ in range(crossover.n_parents)]
            if rng.random() < config.crossover_prob:
                genome, origin = crossover.make_child(parents, rng)
            else:
                genome, origin = np.array(parents[0].genome, copy=True), None
            genome = ga_point_mutation(genome, config.mutation_prob, problem.alphabet, rng)
            offspring.append(Individual(genome, origin=origin))
        evaluate(offspring)
        for child in offspring:
            crossover.offspring_evaluated(child)
        crossover.end_generation()
        population = elites + offspring
        record(gen, population)
        for hook in hooks:
            hook(gen, population, history)

    history.stats.update(crossover.stats())
    history.stats["evals"] = counter.count
    return history
