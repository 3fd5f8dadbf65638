"""Tree generation, subtree crossover and the baseline mutations."""

from __future__ import annotations

import numpy as np

from .primitives import PrimitiveSet
from .tree import Const, Function, GpTree, Node, Var

MAX_SIZE = 256
RETRIES = 10


def random_terminal(pset: PrimitiveSet, rng: np.random.Generator) -> Node:
    k = int(rng.integers(pset.n_terminals))
    if k < pset.n_vars:
        return Var(k)
    return Const(instantiate_constant(pset.const_range, rng))


def instantiate_constant(bounds: tuple[float, float], rng: np.random.Generator) -> float:
    lo, hi = bounds
    if lo > hi:
        raise ValueError(f"constant bounds inverted: [{lo}, {hi}]")
    if lo == hi:
        return float(lo)
    return float(rng.uniform(lo, hi))


def generate_nodes(pset: PrimitiveSet, depth: int, method: str,
                   rng: np.random.Generator) -> list[Node]:
    """Prefix nodes of a random tree of maximum depth ``depth`` (root is depth 0).

    ``full`` places functions until the depth limit; ``grow`` picks among all
    primitives below the root, so leaves can stop early.
    """
    if method not in ("full", "grow"):
        raise ValueError(f"unknown tree method {method!r}")
    funcs = pset.functions
    n_funcs = len(funcs)
    nodes: list[Node] = []
    open_slots = [0]  # depths waiting for a node
    while open_slots:
        d = open_slots.pop()
        if d >= depth or n_funcs == 0:
            nodes.append(random_terminal(pset, rng))
            continue
        if method == "full" or d == 0:
            pick_function = True
        else:
            pick_function = rng.random() < n_funcs / (n_funcs + pset.n_terminals)
        if pick_function:
            f = funcs[int(rng.integers(n_funcs))]
            nodes.append(f)
            open_slots.extend([d + 1] * f.arity)
        else:
            nodes.append(random_terminal(pset, rng))
    return nodes


def generate_tree(pset: PrimitiveSet, depth: int, method: str, rng: np.random.Generator,
                  max_size: int = MAX_SIZE) -> GpTree:
    """Random tree within ``max_size``; the depth drops when attempts keep overflowing."""
    while True:
        for _ in range(RETRIES):
            nodes = generate_nodes(pset, depth, method, rng)
            if len(nodes) <= max_size:
                return GpTree(nodes, pset, check=False)
        if depth == 0:
            raise ValueError("cannot build a tree within the size cap")
        depth -= 1


def ramped_half_and_half(pset: PrimitiveSet, depth_range: tuple[int, int], rng: np.random.Generator,
                         n: int = 1, max_size: int = MAX_SIZE) -> list[GpTree]:
    """``n`` trees alternating full/grow while cycling depths over ``depth_range``."""
    lo, hi = depth_range
    if lo < 0 or hi < lo:
        raise ValueError(f"bad depth range {depth_range}")
    depths = list(range(lo, hi + 1))
    out = []
    for i in range(n):
        method = "full" if i % 2 == 0 else "grow"
        depth = depths[(i // 2) % len(depths)]
        out.append(generate_tree(pset, depth, method, rng, max_size))
    return out


def subtree_crossover(t1: GpTree, t2: GpTree, rng: np.random.Generator,
                      max_size: int = MAX_SIZE) -> GpTree:
    for _ in range(RETRIES):
        i = int(rng.integers(t1.size))
        j = int(rng.integers(t2.size))
        donor = t2.nodes[j:t2.subtree_end(j)]
        ie = t1.subtree_end(i)
        if t1.size - (ie - i) + len(donor) <= max_size:
            return t1.replace(i, ie, donor)
    return t1


def _alternative(node: Node, pset: PrimitiveSet, rng: np.random.Generator) -> Node:
    if isinstance(node, Function):
        options = [f for f in pset.by_arity[node.arity] if f is not node]
        return options[int(rng.integers(len(options)))] if options else node
    # terminals: other variables, or a fresh constant
    options: list = [Var(k) for k in range(pset.n_vars) if node != Var(k)]
    if pset.has_constants:
        options.append(None)
    if not options:
        return node
    pick = options[int(rng.integers(len(options)))]
    return Const(instantiate_constant(pset.const_range, rng)) if pick is None else pick


def point_mutation_gp(tree: GpTree, rng: np.random.Generator, rate: float = 0.05) -> GpTree:
    """Swap each node (probability ``rate``, at least one) for a same-kind alternative."""
    hits = np.flatnonzero(rng.random(tree.size) < rate)
    if hits.size == 0:
        hits = [int(rng.integers(tree.size))]
    nodes = list(tree.nodes)
    for i in hits:
        nodes[i] = _alternative(nodes[i], tree.pset, rng)
    return GpTree(nodes, tree.pset, check=False)


def subtree_mutation(tree: GpTree, rng: np.random.Generator, donor_depth: tuple[int, int] = (1, 4),
                     max_size: int = MAX_SIZE) -> GpTree:
    lo, hi = donor_depth
    for _ in range(RETRIES):
        i = int(rng.integers(tree.size))
        ie = tree.subtree_end(i)
        depth = int(rng.integers(lo, hi + 1))
        method = "full" if rng.random() < 0.5 else "grow"
        donor = generate_nodes(tree.pset, depth, method, rng)
        if tree.size - (ie - i) + len(donor) <= max_size:
            return tree.replace(i, ie, donor)
    return tree


def hoist_mutation(tree: GpTree, rng: np.random.Generator) -> GpTree:
    i = int(rng.integers(tree.size))
    ie = tree.subtree_end(i)
    j = int(rng.integers(i, ie))
    return tree.replace(i, ie, tree.nodes[j:tree.subtree_end(j)])


MIXED_CHOICES = ("point", "subtree", "hoist")


def mixed_mutation(tree: GpTree, rng: np.random.Generator, rate: float = 0.05,
                   donor_depth: tuple[int, int] = (1, 4), max_size: int = MAX_SIZE,
                   counts: dict | None = None) -> GpTree:
    choice = MIXED_CHOICES[int(rng.integers(3))]
    if counts is not None:
        counts[choice] = counts.get(choice, 0) + 1
    if choice == "point":
        return point_mutation_gp(tree, rng, rate)
    if choice == "subtree":
        return subtree_mutation(tree, rng, donor_depth, max_size)
    return hoist_mutation(tree, rng)


def mutated_positions(before: GpTree, after: GpTree) -> list[int]:
    if before.shape() != after.shape():
        raise ValueError("trees differ in shape")
    return [i for i, (a, b) in enumerate(zip(before.nodes, after.nodes)) if a != b]

