"""Bidirectional transformer encoder with a masked-token prediction head."""

from __future__ import annotations

import numpy as np

from .. import diffcore as dc
from ..diffcore import Tensor
from .layers import ParamGroup, xavier


class TransformerParams(ParamGroup):
    """Token and learned positional embeddings, post-norm encoder blocks, affine head."""

    def __init__(self, vocab: int, dim: int = 64, blocks: int = 2, heads: int = 4,
                 ffn: int = 128, max_len: int = 256, rng: np.random.Generator | None = None,
                 zero_head: bool = True):
        super().__init__()
        if dim % heads:
            raise ValueError(f"head count {heads} must divide model dim {dim}")
        self.vocab, self.dim, self.blocks, self.heads = vocab, dim, blocks, heads
        self.ffn, self.max_len = ffn, max_len

        def w(a, b):
            return xavier(rng, a, b) if rng is not None else np.zeros((a, b))

        def normal(shape, s):
            return rng.normal(0.0, s, size=shape) if rng is not None else np.zeros(shape)

        self.add("tok", normal((vocab, dim), 1.0 / np.sqrt(dim)))
        self.add("pos", normal((max_len, dim), 1.0 / np.sqrt(dim)))
        for k in range(blocks):
            for name in ("q", "k", "v", "o"):
                self.add(f"b{k}_W{name}", w(dim, dim))
                self.add(f"b{k}_c{name}", np.zeros(dim))
            self.add(f"b{k}_ln1_g", np.ones(dim))
            self.add(f"b{k}_ln1_b", np.zeros(dim))
            self.add(f"b{k}_W1", w(dim, ffn))
            self.add(f"b{k}_c1", np.zeros(ffn))
            self.add(f"b{k}_W2", w(ffn, dim))
            self.add(f"b{k}_c2", np.zeros(dim))
            self.add(f"b{k}_ln2_g", np.ones(dim))
            self.add(f"b{k}_ln2_b", np.zeros(dim))
        self.add("head_W", np.zeros((dim, vocab)) if zero_head else w(dim, vocab))
        self.add("head_b", np.zeros(vocab))

    def p(self, name: str) -> Tensor:
        return self._params[name]


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = dc.reshape(x, tuple(lead) + (n, heads, d // heads))
    nd = x.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return dc.transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    nd = x.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    x = dc.transpose(x, axes)
    return dc.reshape(x, tuple(lead) + (n, h * dh))


def transformer_encode(token_ids, params: TransformerParams, return_attention: bool = False,
                       query_rows=None):
    """Contextual vectors for ``token_ids`` of shape ``(n,)`` or ``(batch, n)``.

    No causal mask: every position attends to every other. With
    ``query_rows`` only those rows are returned: positions ``(r,)`` for a
    single sequence (output ``(r, d)``), or one position per sequence for a
    batch (output ``(batch, d)``). The last block then runs for those rows only.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    n = ids.shape[-1]
    if n > params.max_len:
        raise ValueError(f"sequence length {n} exceeds positional table size {params.max_len}")
    if n == 0:
        raise ValueError("cannot encode an empty sequence")
    if ids.min() < 0 or ids.max() >= params.vocab:
        raise IndexError(f"token id out of range [0, {params.vocab})")
    P = params.p
    x = dc.gather_rows(P("tok"), ids) + P("pos")[:n]
    inv_sqrt = 1.0 / np.sqrt(params.dim // params.heads)
    attn_maps = []
    rows = None
    if query_rows is not None:
        rows = np.asarray(query_rows, dtype=np.int64)
        if ids.ndim == 2 and rows.shape != ids.shape[:1]:
            raise ValueError(f"need one query row per sequence, got {rows.shape} for {ids.shape}")
        if ids.ndim > 2:
            raise ValueError("query_rows supports 1-D or 2-D token arrays")
    for k in range(params.blocks):
        q_in = x
        if rows is not None and k == params.blocks - 1:
            if ids.ndim == 1:
                q_in = x[rows]
            else:
                q_in = dc.reshape(x[np.arange(len(rows)), rows], (len(rows), 1, params.dim))
        q = _split_heads(dc.matmul(q_in, P(f"b{k}_Wq")) + P(f"b{k}_cq"), params.heads)
        kk = _split_heads(dc.matmul(x, P(f"b{k}_Wk")) + P(f"b{k}_ck"), params.heads)
        v = _split_heads(dc.matmul(x, P(f"b{k}_Wv")) + P(f"b{k}_cv"), params.heads)
        ctx = dc.attention(q, kk, v, inv_sqrt, attn_maps if return_attention else None)
        mixed = dc.matmul(_merge_heads(ctx), P(f"b{k}_Wo")) + P(f"b{k}_co")
        x = dc.layer_norm(q_in + mixed, P(f"b{k}_ln1_g"), P(f"b{k}_ln1_b"))
        hidden = dc.relu(dc.matmul(x, P(f"b{k}_W1")) + P(f"b{k}_c1"))
        ff = dc.matmul(hidden, P(f"b{k}_W2")) + P(f"b{k}_c2")
        x = dc.layer_norm(x + ff, P(f"b{k}_ln2_g"), P(f"b{k}_ln2_b"))
    if rows is not None:
        if params.blocks == 0:
            x = x[rows] if ids.ndim == 1 else x[np.arange(len(rows)), rows]
        elif ids.ndim == 2:
            x = dc.reshape(x, (len(rows), params.dim))
    if return_attention:
        return x, attn_maps
    return x


def mlm_logits(context: Tensor, params: TransformerParams) -> Tensor:
    return dc.matmul(context, params.p("head_W")) + params.p("head_b")


def _ln(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    xc = x - x.mean(axis=-1, keepdims=True)
    return xc / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps) * g + b


def _softmax(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, overwriting ``x``."""
    x -= x.max(axis=-1, keepdims=True)
    np.exp(x, out=x)
    x /= x.sum(axis=-1, keepdims=True)
    return x


def mlm_logits_at(token_ids, positions, params: TransformerParams) -> np.ndarray:
    """MLM logits at ``positions`` of one sequence, computed in plain numpy.

    Inference-only twin of :func:`transformer_encode` followed by
    :func:`mlm_logits`. The last block is evaluated only for the requested
    query rows, which leaves those rows unchanged.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    n = ids.shape[0]
    if ids.ndim != 1 or n == 0 or n > params.max_len:
        raise ValueError(f"expected a 1-D sequence of length 1..{params.max_len}, got {ids.shape}")
    if ids.min() < 0 or ids.max() >= params.vocab:
        raise IndexError(f"token id out of range [0, {params.vocab})")
    rows = np.atleast_1d(np.asarray(positions, dtype=np.int64))
    P = {k: v.data for k, v in params.named_parameters().items()}
    h, dh = params.heads, params.dim // params.heads
    inv_sqrt = 1.0 / np.sqrt(dh)
    x = P["tok"][ids] + P["pos"][:n]
    for k in range(params.blocks):
        q_in = x if k < params.blocks - 1 else x[rows]
        q = (q_in @ P[f"b{k}_Wq"] + P[f"b{k}_cq"]).reshape(-1, h, dh).transpose(1, 0, 2)
        kk = (x @ P[f"b{k}_Wk"] + P[f"b{k}_ck"]).reshape(n, h, dh).transpose(1, 0, 2)
        v = (x @ P[f"b{k}_Wv"] + P[f"b{k}_cv"]).reshape(n, h, dh).transpose(1, 0, 2)
        att = _softmax((q * inv_sqrt) @ kk.transpose(0, 2, 1))
        mixed = (att @ v).transpose(1, 0, 2).reshape(-1, h * dh) @ P[f"b{k}_Wo"] + P[f"b{k}_co"]
        x = _ln(q_in + mixed, P[f"b{k}_ln1_g"], P[f"b{k}_ln1_b"])
        ff = np.maximum(x @ P[f"b{k}_W1"] + P[f"b{k}_c1"], 0.0) @ P[f"b{k}_W2"] + P[f"b{k}_c2"]
        x = _ln(x + ff, P[f"b{k}_ln2_g"], P[f"b{k}_ln2_b"])
    if params.blocks == 0:
        x = x[rows]
    return x @ P["head_W"] + P["head_b"]
