"""Embeddings, LSTM cells and the pointer scorer."""

from __future__ import annotations

import numpy as np

from .. import diffcore as dc
from ..diffcore import Tensor, parameter


class ParamGroup:
    """Ordered bag of named parameter tensors."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        t = parameter(value, name=name)
        self._params[name] = t
        setattr(self, name, t)
        return t

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + k: v for k, v in self._params.items()}

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_(self) -> None:
        for p in self._params.values():
            p.data[...] = 0.0


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class EmbeddingTable(ParamGroup):
    def __init__(self, vocab: int, dim: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.vocab, self.dim = vocab, dim
        init = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(vocab, dim)) if rng is not None \
            else np.zeros((vocab, dim))
        self.add("table", init)


def embed(table: EmbeddingTable, token_ids) -> Tensor:
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size == 0:
        return Tensor(np.zeros(ids.shape + (table.dim,)))
    if ids.min() < 0 or ids.max() >= table.vocab:
        raise IndexError(f"token id out of range [0, {table.vocab}): {ids.min()}..{ids.max()}")
    return dc.gather_rows(table.table, ids)


class LstmParams(ParamGroup):
    """Separate weight matrix and bias per gate, each mapping [x, h] to H."""

    GATES = ("i", "f", "g", "o")

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        n = input_dim + hidden_dim
        bound = 1.0 / np.sqrt(hidden_dim)
        for gate in self.GATES:
            w = rng.uniform(-bound, bound, size=(n, hidden_dim)) if rng is not None \
                else np.zeros((n, hidden_dim))
            self.add(f"W_{gate}", w)
        for gate in self.GATES:
            self.add(f"b_{gate}", np.zeros(hidden_dim))

    def fused(self) -> tuple[Tensor, Tensor]:
        """Gate weights stacked column-wise; build once per sequence."""
        w = dc.concat([self._params[f"W_{g}"] for g in self.GATES], axis=1)
        b = dc.concat([self._params[f"b_{g}"] for g in self.GATES], axis=0)
        return w, b


def lstm_step(x: Tensor, h: Tensor, c: Tensor, params: LstmParams,
              fused: tuple[Tensor, Tensor] | None = None) -> tuple[Tensor, Tensor]:
    w, b = fused if fused is not None else params.fused()
    n = params.hidden_dim
    z = dc.matmul(dc.concat([x, h], axis=-1), w) + b
    i = dc.sigmoid(z[..., :n])
    f = dc.sigmoid(z[..., n:2 * n])
    g = dc.tanh(z[..., 2 * n:3 * n])
    o = dc.sigmoid(z[..., 3 * n:])
    c_new = f * c + i * g
    return o * dc.tanh(c_new), c_new


def lstm_encode(seq: Tensor, params: LstmParams, state: tuple[Tensor, Tensor] | None = None):
    """Run the cell over axis -2 of ``seq`` (shape ``(..., T, input_dim)``).

    Returns the list of per-step hidden states and the final ``(h, c)``.
    """
    lead = seq.shape[:-2]
    if state is None:
        zeros = np.zeros(lead + (params.hidden_dim,))
        state = Tensor(zeros), Tensor(zeros.copy())
    h, c = state
    steps = seq.shape[-2]
    hs: list[Tensor] = []
    if steps == 0:
        return hs, (h, c)
    fused = params.fused()
    for t in range(steps):
        h, c = lstm_step(seq[..., t, :], h, c, params, fused)
        hs.append(h)
    return hs, (h, c)


class PointerParams(ParamGroup):
    def __init__(self, ref_dim: int, query_dim: int, attn_dim: int,
                 rng: np.random.Generator | None = None, zero_v: bool = True):
        super().__init__()
        self.ref_dim, self.query_dim, self.attn_dim = ref_dim, query_dim, attn_dim
        w = (lambda a, b: xavier(rng, a, b)) if rng is not None else (lambda a, b: np.zeros((a, b)))
        self.add("W_ref", w(ref_dim, attn_dim))
        self.add("W_query", w(query_dim, attn_dim))
        v = np.zeros(attn_dim) if (zero_v or rng is None) else rng.normal(0, 1 / np.sqrt(attn_dim), attn_dim)
        self.add("v", v)


def pointer_scores(query: Tensor, refs: Tensor, params: PointerParams,
                   projected_refs: Tensor | None = None) -> Tensor:
    """Logits ``v . tanh(W_ref r_j + W_query q)`` for every reference.

    ``refs`` has shape ``(..., m, ref_dim)`` and ``query`` ``(..., query_dim)``;
    the result is ``(..., m)``.
    """
    if refs.shape[-2] == 0:
        raise ValueError("pointer_scores needs at least one reference vector")
    pr = projected_refs if projected_refs is not None else dc.matmul(refs, params.W_ref)
    pq = dc.matmul(query, params.W_query)
    pq = dc.reshape(pq, pq.shape[:-1] + (1, params.attn_dim))
    return dc.matmul(dc.tanh(pr + pq), params.v)
