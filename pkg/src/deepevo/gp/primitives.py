from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DIV_THRESHOLD = 1e-6


def protected_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Division that yields 1 wherever |b| < 1e-6."""
    safe = np.abs(b) >= DIV_THRESHOLD
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return np.where(safe, np.divide(a, np.where(safe, b, 1.0)), 1.0)


@dataclass(frozen=True, eq=False)
class Function:
    name: str
    arity: int
    fn: Callable = field(repr=False)
    symbol: str | None = None  # infix operator, binary functions only

    def __repr__(self) -> str:
        return f"Function({self.name}/{self.arity})"


ADD = Function("add", 2, np.add, "+")
SUB = Function("sub", 2, np.subtract, "-")
MUL = Function("mul", 2, np.multiply, "*")
DIV = Function("div", 2, protected_div, "/")
SIN = Function("sin", 1, np.sin)
COS = Function("cos", 1, np.cos)

DEFAULT_FUNCTIONS = (ADD, SUB, MUL, DIV, SIN, COS)


@dataclass(eq=False)
class PrimitiveSet:
    """Functions, variable terminals and (optionally) ephemeral constants."""

    functions: Sequence[Function]
    n_vars: int
    const_range: tuple[float, float] | None = (-1.0, 1.0)
    var_names: Sequence[str] | None = None

    def __post_init__(self):
        self.functions = tuple(self.functions)
        names = [f.name for f in self.functions]
        if len(set(names)) != len(names):
            raise ValueError(f"function names must be unique: {names}")
        if self.n_vars < 0:
            raise ValueError("variable count cannot be negative")
        if self.n_vars == 0 and self.const_range is None:
            raise ValueError("primitive set needs at least one terminal")
        if self.const_range is not None and self.const_range[0] > self.const_range[1]:
            raise ValueError(f"constant bounds inverted: {self.const_range}")
        if self.var_names is None:
            self.var_names = tuple(f"x{i}" for i in range(self.n_vars))
        if len(self.var_names) != self.n_vars:
            raise ValueError("var_names must name every variable")
        self.var_names = tuple(self.var_names)
        self.by_name = {f.name: f for f in self.functions}
        self.by_symbol = {f.symbol: f for f in self.functions if f.symbol}
        self.by_arity: dict[int, tuple[Function, ...]] = {}
        for f in self.functions:
            self.by_arity.setdefault(f.arity, ())
            self.by_arity[f.arity] += (f,)

    @property
    def has_constants(self) -> bool:
        return self.const_range is not None

    @property
    def n_terminals(self) -> int:
        return self.n_vars + (1 if self.has_constants else 0)


def default_pset(n_vars: int, const_range: tuple[float, float] | None = (-1.0, 1.0)) -> PrimitiveSet:
    return PrimitiveSet(DEFAULT_FUNCTIONS, n_vars, const_range)
