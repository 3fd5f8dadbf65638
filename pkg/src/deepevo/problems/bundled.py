"""Tiny instances shipped with the package for tests and quick runs."""

from __future__ import annotations

from importlib import resources

from .combinatorial import BppInstance, GraphInstance, parse_bpp, parse_dimacs
from .regression import RegressionDataset, gen_f2, gen_friedman, gen_nonanalytic

GRAPHS = {"triangle": ("triangle.col", 3), "gnp20": ("gnp20.col", 5)}
BPP = {"bpp10": "bpp10.txt"}


def _text(filename: str) -> str:
    return resources.files(__package__).joinpath("data", filename).read_text()


def bundled_graph(name: str, k: int | None = None) -> GraphInstance:
    if name not in GRAPHS:
        raise KeyError(f"unknown bundled graph {name!r}; choose from {sorted(GRAPHS)}")
    filename, default_k = GRAPHS[name]
    return parse_dimacs(_text(filename), k if k is not None else default_k, name)


def bundled_bpp(name: str) -> BppInstance:
    if name not in BPP:
        raise KeyError(f"unknown bundled bin-packing instance {name!r}; choose from {sorted(BPP)}")
    return parse_bpp(_text(BPP[name]), name)


GENERATED = {
    "friedman1": lambda n, seed, noise: gen_friedman(1, n, noise, seed),
    "friedman2": lambda n, seed, noise: gen_friedman(2, n, noise, seed),
    "friedman3": lambda n, seed, noise: gen_friedman(3, n, noise, seed),
    "f2": lambda n, seed, noise: gen_f2(n, seed),
    "non_analytic": lambda n, seed, noise: gen_nonanalytic(n, seed),
}


def generated_dataset(name: str, n: int = 5000, seed: int = 0, noise: float = 0.0) -> RegressionDataset:
    if name not in GENERATED:
        raise KeyError(f"unknown generated dataset {name!r}; choose from {sorted(GENERATED)}")
    return GENERATED[name](n, seed, noise)
