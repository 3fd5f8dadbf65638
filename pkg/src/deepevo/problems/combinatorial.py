"""Graph-coloring and bin-packing instances, parsers and GA adapters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import MAXIMIZE, MINIMIZE


class InstanceFormatError(ValueError):
    """Malformed instance text; messages carry 1-based line numbers."""


@dataclass(frozen=True)
class GraphInstance:
    n: int
    edges: np.ndarray  # (E, 2) zero-based, u < v, no duplicates
    k: int
    name: str = "graph"

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.n < 1:
            raise ValueError("graph needs at least one vertex")
        if edges.size and (edges.min() < 0 or edges.max() >= self.n):
            raise ValueError(f"edge endpoint outside [0, {self.n})")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        if self.k < 1:
            raise ValueError("color budget k must be >= 1")
        edges = np.unique(np.sort(edges, axis=1), axis=0)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def max_degree(self) -> int:
        if not len(self.edges):
            return 0
        return int(np.bincount(self.edges.ravel(), minlength=self.n).max())


def parse_dimacs(text: str, k: int | None = None, name: str = "graph") -> GraphInstance:
    """Parse DIMACS edge format ("p edge n m", then "e u v", 1-indexed).

    ``k`` defaults to max degree + 1, which always admits a proper coloring.
    """
    n = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0] == "c":
            continue
        tag = parts[0]
        if tag == "p":
            if n is not None:
                raise InstanceFormatError(f"line {lineno}: second problem line")
            if len(parts) != 4 or parts[1] not in ("edge", "col"):
                raise InstanceFormatError(f"line {lineno}: expected 'p edge <n> <m>', got {raw!r}")
            try:
                n = int(parts[2])
                int(parts[3])  # edge count; duplicates make it unreliable, so it is not enforced
            except ValueError:
                raise InstanceFormatError(f"line {lineno}: non-integer size in {raw!r}") from None
            if n < 1:
                raise InstanceFormatError(f"line {lineno}: vertex count must be positive")
        elif tag == "e":
            if n is None:
                raise InstanceFormatError(f"line {lineno}: edge before the 'p' line")
            if len(parts) != 3:
                raise InstanceFormatError(f"line {lineno}: expected 'e <u> <v>', got {raw!r}")
            try:
                u, v = int(parts[1]), int(parts[2])
            except ValueError:
                raise InstanceFormatError(f"line {lineno}: non-integer vertex in {raw!r}") from None
            for x in (u, v):
                if not 1 <= x <= n:
                    raise InstanceFormatError(f"line {lineno}: vertex {x} outside 1..{n}")
            if u == v:
                raise InstanceFormatError(f"line {lineno}: self-loop on vertex {u}")
            edges.append((u - 1, v - 1))
        else:
            raise InstanceFormatError(f"line {lineno}: unknown line type {tag!r}")
    if n is None:
        raise InstanceFormatError("missing 'p edge' problem line")
    g = GraphInstance(n, np.array(edges, dtype=np.int64).reshape(-1, 2), 1, name)
    return GraphInstance(n, g.edges, k if k is not None else g.max_degree + 1, name)


def to_dimacs(graph: GraphInstance) -> str:
    lines = [f"p edge {graph.n} {len(graph.edges)}"]
    lines += [f"e {u + 1} {v + 1}" for u, v in graph.edges]
    return "\n".join(lines) + "\n"


def coloring_conflicts(graph: GraphInstance, genome) -> int:
    g = np.asarray(genome)
    if not len(graph.edges):
        return 0
    return int(np.count_nonzero(g[graph.edges[:, 0]] == g[graph.edges[:, 1]]))


def coloring_fitness(graph: GraphInstance, genome, k: int | None = None) -> float:
    """``n*k * conflicts + colors used``; lower is better, any conflict outweighs all colors."""
    k = graph.k if k is None else k
    g = np.asarray(genome, dtype=np.int64)
    if g.shape != (graph.n,):
        raise ValueError(f"genome length {g.shape} does not match {graph.n} vertices")
    if g.min() < 0 or g.max() >= k:
        raise ValueError(f"colors must lie in [0, {k})")
    penalty = graph.n * k
    return float(penalty * coloring_conflicts(graph, g) + len(np.unique(g)))


@dataclass(frozen=True)
class BppInstance:
    capacity: float
    sizes: np.ndarray
    name: str = "bpp"

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=np.float64)
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        if sizes.ndim != 1 or sizes.size == 0:
            raise ValueError("need a non-empty list of item sizes")
        bad = np.flatnonzero((sizes <= 0) | (sizes > self.capacity))
        if bad.size:
            i = int(bad[0])
            raise ValueError(f"item {i} has size {sizes[i]}, outside (0, {self.capacity}]")
        sizes.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)

    @property
    def n_items(self) -> int:
        return int(self.sizes.size)


def _number(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise InstanceFormatError(f"line {lineno}: expected a number, got {tok!r}") from None


def parse_bpp(text: str, name: str = "bpp") -> BppInstance:
    """Item count, capacity, then one size per line; blank lines are skipped."""
    rows = [(i, line.strip()) for i, line in enumerate(text.splitlines(), start=1) if line.strip()]
    if len(rows) < 2:
        raise InstanceFormatError("need an item count line and a capacity line")
    count = _number(rows[0][1], rows[0][0])
    if count != int(count) or count < 1:
        raise InstanceFormatError(f"line {rows[0][0]}: item count must be a positive integer")
    capacity = _number(rows[1][1], rows[1][0])
    sizes = [_number(tok, i) for i, tok in rows[2:]]
    if len(sizes) != int(count):
        raise InstanceFormatError(f"header declares {int(count)} items, found {len(sizes)}")
    for (lineno, _), s in zip(rows[2:], sizes):
        if not 0 < s <= capacity:
            raise InstanceFormatError(f"line {lineno}: item size {s} outside (0, {capacity}]")
    return BppInstance(capacity, np.array(sizes), name)


def bin_fills(instance: BppInstance, genome) -> np.ndarray:
    g = np.asarray(genome, dtype=np.int64)
    if g.shape != (instance.n_items,):
        raise ValueError(f"genome length {g.shape} does not match {instance.n_items} items")
    if g.min() < 0:
        raise ValueError("bin indices must be non-negative")
    return np.bincount(g, weights=instance.sizes)


def bpp_fitness(instance: BppInstance, genome) -> float:
    """Falkenauer fitness (mean squared fill ratio of used bins); higher is better.

    Overfull assignments score minus the number of overfull bins.
    """
    fills = bin_fills(instance, genome)
    over = int(np.count_nonzero(fills > instance.capacity * (1 + 1e-12)))
    if over:
        return -float(over)
    used = fills[fills > 0]
    return float(np.sum((used / instance.capacity) ** 2) / used.size)


@dataclass
class ColoringProblem:
    """GA adapter: one gene per vertex, alphabet = color budget."""

    graph: GraphInstance
    direction: str = MINIMIZE

    @property
    def genome_length(self) -> int:
        return self.graph.n

    @property
    def alphabet(self) -> int:
        return self.graph.k

    def fitness(self, genome) -> float:
        return coloring_fitness(self.graph, genome)


@dataclass
class BinPackingProblem:
    """GA adapter: one gene per item holding its bin index."""

    instance: BppInstance
    n_bins: int | None = None
    direction: str = MAXIMIZE

    def __post_init__(self):
        if self.n_bins is None:
            self.n_bins = self.instance.n_items
        if self.n_bins < 1:
            raise ValueError("need at least one bin")

    @property
    def genome_length(self) -> int:
        return self.instance.n_items

    @property
    def alphabet(self) -> int:
        return self.n_bins

    def fitness(self, genome) -> float:
        return bpp_fitness(self.instance, genome)


def random_graph(n: int, p: float, k: int, seed: int = 0, name: str | None = None) -> GraphInstance:
    """Erdos-Renyi G(n, p) graph with color budget ``k``."""
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return GraphInstance(n, np.stack([iu[keep], ju[keep]], axis=1), k,
                         name or f"gnp_{n}_{p}_{seed}")
