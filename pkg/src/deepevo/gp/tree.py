"""Expression trees stored as prefix (pre-order) node tuples.

A node is a :class:`Function`, a :class:`Var` or a :class:`Const`. Position
``i`` in the tuple is the ``i``-th node of a depth-first, left-to-right walk,
which is also the order tokens are emitted and masks are filled.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .primitives import Function, PrimitiveSet


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Mask:
    """Placeholder left by the masking step; ``arity`` 0 means a terminal."""
    arity: int = 0


Node = Union[Function, Var, Const, Mask]


def arity_of(node: Node) -> int:
    if isinstance(node, Function):
        return node.arity
    if isinstance(node, Mask):
        return node.arity
    return 0


class InvalidTreeError(ValueError):
    pass


class GpTree:
    __slots__ = ("nodes", "pset", "_ends")

    def __init__(self, nodes: Sequence[Node], pset: PrimitiveSet, check: bool = True):
        self.nodes = tuple(nodes)
        self.pset = pset
        self._ends: list[int] | None = None
        if check:
            validate_nodes(self.nodes, pset)

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other) -> bool:
        return isinstance(other, GpTree) and self.nodes == other.nodes

    def __hash__(self) -> int:
        return hash(self.nodes)

    def __repr__(self) -> str:
        return f"GpTree({serialize(self)!r})"

    @property
    def size(self) -> int:
        return len(self.nodes)

    def subtree_end(self, i: int) -> int:
        """Exclusive end index of the subtree rooted at ``i``."""
        if self._ends is None:
            self._ends = subtree_ends(self.nodes)
        return self._ends[i]

    def depths(self) -> list[int]:
        return node_depths(self.nodes)

    @property
    def depth(self) -> int:
        return max(self.depths())

    def shape(self) -> tuple[int, ...]:
        """Arity sequence in prefix order; equal shapes mean equal tree structure."""
        return tuple(arity_of(n) for n in self.nodes)

    def replace(self, start: int, end: int, new: Sequence[Node]) -> "GpTree":
        return GpTree(self.nodes[:start] + tuple(new) + self.nodes[end:], self.pset, check=False)


def subtree_ends(nodes: Sequence[Node]) -> list[int]:
    # right-to-left: each child's span is on the stack when its parent is reached
    ends = [0] * len(nodes)
    spans: list[int] = []
    for i in range(len(nodes) - 1, -1, -1):
        end = i + 1
        for _ in range(arity_of(nodes[i])):
            end = spans.pop()
        ends[i] = end
        spans.append(end)
    return ends


def node_depths(nodes: Sequence[Node]) -> list[int]:
    depths = []
    pending: list[int] = []  # depth of the next node to be placed for each open slot
    for n in nodes:
        d = pending.pop() if pending else 0
        depths.append(d)
        pending.extend([d + 1] * arity_of(n))
    return depths


def validate_nodes(nodes: Sequence[Node], pset: PrimitiveSet | None = None,
                   allow_mask: bool = False) -> None:
    if not nodes:
        raise InvalidTreeError("empty tree")
    need = 1
    for i, n in enumerate(nodes):
        if need == 0:
            raise InvalidTreeError(f"extra nodes after complete tree at position {i}")
        if isinstance(n, Mask) and not allow_mask:
            raise InvalidTreeError(f"mask left in tree at position {i}")
        if isinstance(n, Var) and pset is not None and not 0 <= n.index < pset.n_vars:
            raise InvalidTreeError(f"variable index {n.index} out of range at position {i}")
        if isinstance(n, Const) and pset is not None and not pset.has_constants:
            raise InvalidTreeError("constant node but the primitive set has no constants")
        if isinstance(n, Function) and pset is not None and pset.by_name.get(n.name) is not n:
            raise InvalidTreeError(f"function {n.name!r} not in primitive set")
        need += arity_of(n) - 1
    if need != 0:
        raise InvalidTreeError(f"tree is incomplete: {need} argument(s) missing")


def is_valid(tree: GpTree) -> bool:
    try:
        validate_nodes(tree.nodes, tree.pset)
    except InvalidTreeError:
        return False
    return True


# -- evaluation ------------------------------------------------------------------

def eval_tree(tree: GpTree, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    stack: list[np.ndarray] = []
    with np.errstate(all="ignore"):
        for node in reversed(tree.nodes):
            if isinstance(node, Var):
                if node.index >= X.shape[1]:
                    raise IndexError(f"variable x{node.index} but data has {X.shape[1]} column(s)")
                stack.append(X[:, node.index])
            elif isinstance(node, Const):
                stack.append(np.full(n, node.value))
            elif isinstance(node, Function):
                args = [stack.pop() for _ in range(node.arity)]
                stack.append(node.fn(*args))
            else:
                raise InvalidTreeError("cannot evaluate a masked tree")
    return stack[0]


def rmse(predictions: np.ndarray, targets: np.ndarray) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        return math.inf
    with np.errstate(over="ignore"):
        err = float(np.sqrt(np.mean((p - np.asarray(targets, dtype=np.float64)) ** 2)))
    return err if math.isfinite(err) else math.inf


# -- serialisation -----------------------------------------------------------------

_SPACED = {"+", "-"}


def format_const(value: float) -> str:
    if math.isfinite(value) and value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def _render(nodes, i, names, top):
    node = nodes[i]
    if isinstance(node, Var):
        return names[node.index], i + 1
    if isinstance(node, Const):
        return format_const(node.value), i + 1
    if isinstance(node, Mask) and node.arity == 0:
        return "#", i + 1
    args = []
    j = i + 1
    for _ in range(arity_of(node)):
        s, j = _render(nodes, j, names, False)
        args.append(s)
    symbol = "#" if isinstance(node, Mask) else node.symbol
    if symbol is not None and len(args) == 2:
        sep = f" {symbol} " if symbol in _SPACED or symbol == "#" else symbol
        text = f"{args[0]}{sep}{args[1]}"
        return (text if top else f"({text})"), j
    name = "#" if isinstance(node, Mask) else node.name
    return f"{name}({', '.join(args)})", j


def serialize(tree: GpTree | Sequence[Node], pset: PrimitiveSet | None = None) -> str:
    """Infix text: binary operators fully parenthesised below the root, calls otherwise."""
    nodes = tree.nodes if isinstance(tree, GpTree) else tuple(tree)
    pset = pset or (tree.pset if isinstance(tree, GpTree) else None)
    names = pset.var_names if pset is not None else [f"x{k}" for k in range(1 + max(
        [n.index for n in nodes if isinstance(n, Var)], default=0))]
    return _render(nodes, 0, names, True)[0]


_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
                    r"|([A-Za-z_]\w*)|(.))")


class ParseError(ValueError):
    pass


def _lex(text: str) -> list[str]:
    out = []
    pos = 0
    for m in _TOKEN.finditer(text):
        if m.start() != pos and text[pos:m.start()].strip():
            raise ParseError(f"unexpected text at {pos}")
        pos = m.end()
        tok = m.group(1) or m.group(2) or m.group(3)
        if tok and not tok.isspace():
            out.append(tok)
    return out


class _Parser:
    def __init__(self, text: str, pset: PrimitiveSet, allow_mask: bool):
        self.toks = _lex(text)
        self.pos = 0
        self.pset = pset
        self.allow_mask = allow_mask
        self.vars = {name: i for i, name in enumerate(pset.var_names)}

    def peek(self):
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def eat(self, expected=None):
        tok = self.peek()
        if tok is None or (expected is not None and tok != expected):
            raise ParseError(f"expected {expected or 'token'} at token {self.pos}, got {tok!r}")
        self.pos += 1
        return tok

    def expr(self) -> list[Node]:
        left = self.operand()
        tok = self.peek()
        if tok is not None and (tok in self.pset.by_symbol or tok == "#"):
            self.eat()
            right = self.operand()
            head = self._mask(2) if tok == "#" else self.pset.by_symbol[tok]
            return [head] + left + right
        return left

    def _mask(self, arity):
        if not self.allow_mask:
            raise ParseError("mask symbol '#' not allowed here")
        return Mask(arity)

    def operand(self) -> list[Node]:
        tok = self.eat()
        if tok == "(":
            inner = self.expr()
            self.eat(")")
            return inner
        if tok == "-" and self.peek() is not None and self._number(self.peek()):
            return [Const(-float(self.eat()))]
        if self._number(tok):
            return [Const(float(tok))]
        if tok == "#" or tok in self.pset.by_name:
            if self.peek() == "(":
                args = self.call_args()
                head = self._mask(len(args)) if tok == "#" else self.pset.by_name[tok]
                if arity_of(head) != len(args):
                    raise ParseError(f"{tok} takes {arity_of(head)} argument(s), got {len(args)}")
                return [head] + [n for a in args for n in a]
            if tok == "#":
                return [self._mask(0)]
        if tok in self.vars:
            return [Var(self.vars[tok])]
        raise ParseError(f"unknown symbol {tok!r}")

    def call_args(self) -> list[list[Node]]:
        self.eat("(")
        args = [self.expr()]
        while self.peek() == ",":
            self.eat(",")
            args.append(self.expr())
        self.eat(")")
        return args

    @staticmethod
    def _number(tok: str) -> bool:
        return tok[0].isdigit() or tok[0] == "."


def parse_nodes(text: str, pset: PrimitiveSet, allow_mask: bool = False) -> tuple[Node, ...]:
    p = _Parser(text, pset, allow_mask)
    if not p.toks:
        raise ParseError("empty expression")
    nodes = p.expr()
    if p.peek() is not None:
        raise ParseError(f"trailing input at token {p.pos}: {p.peek()!r}")
    validate_nodes(nodes, pset, allow_mask=allow_mask)
    return tuple(nodes)


def parse(text: str, pset: PrimitiveSet) -> GpTree:
    return GpTree(parse_nodes(text, pset), pset)


# -- tokens ------------------------------------------------------------------------

class TokenTable:
    """Integer ids: 0 is MASK, 1 the shared constant token, then functions, then variables."""

    MASK = 0
    CONST = 1

    def __init__(self, pset: PrimitiveSet):
        self.pset = pset
        self.functions = list(pset.functions)
        self.func_offset = 2
        self.var_offset = 2 + len(self.functions)
        self.size = self.var_offset + pset.n_vars
        self._func_id = {f.name: self.func_offset + k for k, f in enumerate(self.functions)}
        # valid replacement ids by node kind (0 = terminal, k = function arity)
        self.terminal_ids = ([self.CONST] if pset.has_constants else []) + \
            list(range(self.var_offset, self.size))
        self.ids_by_arity: dict[int, list[int]] = {0: self.terminal_ids}
        for f in self.functions:
            self.ids_by_arity.setdefault(f.arity, []).append(self._func_id[f.name])

    def token(self, node: Node) -> int:
        if isinstance(node, Mask):
            return self.MASK
        if isinstance(node, Const):
            return self.CONST
        if isinstance(node, Var):
            return self.var_offset + node.index
        return self._func_id[node.name]

    def kind(self, token: int) -> int:
        """Arity of the symbol behind ``token`` (0 for terminals)."""
        if token == self.MASK:
            raise ValueError("MASK has no kind")
        if token >= self.func_offset and token < self.var_offset:
            return self.functions[token - self.func_offset].arity
        return 0

    def node(self, token: int, value: float | None = None) -> Node:
        if token == self.MASK:
            raise ValueError("cannot turn MASK into a tree node")
        if token == self.CONST:
            if value is None:
                raise ValueError("constant token needs a value")
            return Const(value)
        if token < self.var_offset:
            return self.functions[token - self.func_offset]
        return Var(token - self.var_offset)

    def valid_ids(self, arity: int) -> list[int]:
        return self.ids_by_arity.get(arity, [])


def tokenize(tree: GpTree, table: TokenTable) -> tuple[np.ndarray, dict[int, float]]:
    """Pre-order token ids plus the constant value at each constant position.

    Token position ``i`` is tree node ``i``.
    """
    tokens = np.fromiter((table.token(n) for n in tree.nodes), dtype=np.int64, count=len(tree.nodes))
    consts = {i: n.value for i, n in enumerate(tree.nodes) if isinstance(n, Const)}
    return tokens, consts


def detokenize(tokens: Sequence[int], table: TokenTable, constants: dict[int, float]) -> GpTree:
    nodes = [table.node(int(t), constants.get(i)) for i, t in enumerate(tokens)]
    return GpTree(nodes, table.pset)
