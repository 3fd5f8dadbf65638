"""Differentiable operations.

Every function takes tensors (or array-likes, treated as constants) and
returns a new tensor. Backward rules receive the upstream gradient and return
one gradient per input, ``None`` for inputs that need none.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import DomainError, ShapeError, Tensor, active_tape, as_tensor


def _emit(out: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    result = Tensor._wrap(out)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(inputs, result, backward)
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


def _check_finite(name: str, x: Tensor) -> None:
    if not np.all(np.isfinite(x.data)):
        raise DomainError(f"{name}: input contains non-finite values")


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    ka = a.shape[-1]
    kb = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if ka != kb:
        raise ShapeError(f"matmul: inner dimensions differ, shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    try:
        out = np.matmul(ad, bd)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        a2 = ad[None, :] if ad.ndim == 1 else ad
        b2 = bd[:, None] if bd.ndim == 1 else bd
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
        if b2.ndim == 2 and a2.ndim > 2:
            # shared weight matrix: fold batch dims instead of summing per-batch products
            gb = a2.reshape(-1, a2.shape[-1]).T @ g2.reshape(-1, g2.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
        ga = _unbroadcast(ga, a2.shape).reshape(ad.shape)
        gb = _unbroadcast(gb, b2.shape).reshape(bd.shape)
        return ga, gb

    return _emit(out, (a, b), backward)


# -- elementwise unary -------------------------------------------------------

def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _emit(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # 1 / (1 + e^-x) via logaddexp, so exp never overflows
    y = np.exp(-np.logaddexp(0.0, -x.data))
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def log(x) -> Tensor:
    x = as_tensor(x)
    _check_finite("log", x)
    if np.any(x.data <= 0):
        raise DomainError("log: input has non-positive entries")
    d = x.data
    return _emit(np.log(d), (x,), lambda g: (g / d,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _emit(y, (x,), lambda g: (g * y,))


# -- normalisation -----------------------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    _check_finite("softmax", x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit(y, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    _check_finite("log_softmax", x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _emit(y, (x,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply gain and bias."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm: gain/bias shapes {gamma.shape}, {beta.shape} "
                         f"do not match feature size of {x.shape}")
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def backward(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit(xhat * gd + beta.data, (x, gamma, beta), backward)


def attention(q, k, v, scale_by: float, keep: list | None = None) -> Tensor:
    """``softmax(scale_by * q k^T) v`` over the last two axes as one fused op.

    Shapes ``(..., nq, dh)``, ``(..., nk, dh)``, ``(..., nk, dv)``. The
    attention weights are appended to ``keep`` when it is given.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: incompatible shapes {q.shape}, {k.shape}, {v.shape}")
    c = float(scale_by)
    qs = q.data * c
    att = np.matmul(qs, np.swapaxes(k.data, -1, -2))
    att -= att.max(axis=-1, keepdims=True)
    np.exp(att, out=att)
    att /= att.sum(axis=-1, keepdims=True)
    if not np.isfinite(att).all():
        raise DomainError("attention: scores contain non-finite values")
    if keep is not None:
        keep.append(att)

    def backward(g):
        gv = _unbroadcast(np.matmul(np.swapaxes(att, -1, -2), g), v.shape)
        gs = np.matmul(g, np.swapaxes(v.data, -1, -2))
        gs -= (gs * att).sum(axis=-1, keepdims=True)
        gs *= att
        gq = _unbroadcast(np.matmul(gs, k.data) * c, q.shape)
        gk = _unbroadcast(np.matmul(np.swapaxes(gs, -1, -2), qs), k.shape)
        return gq, gk, gv

    return _emit(np.matmul(att, v.data), (q, k, v), backward)


# -- reductions ----------------------------------------------------------------

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# -- structural ----------------------------------------------------------------

def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes "
                         + " and ".join(str(t.shape) for t in ts)) from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit(out, ts, backward)


def gather_rows(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; output shape is ``ids.shape + table.shape[1:]``."""
    table = as_tensor(table)
    idx = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows: ids must lie in [0, {n}), got range "
                         f"[{idx.min()}, {idx.max()}]")
    if idx.size == 0:
        out = np.zeros(idx.shape + table.shape[1:])
    else:
        out = table.data[idx]
    shape = table.shape

    def backward(g):
        gt = np.zeros(shape)
        flat = idx.ravel()
        if flat.size:
            # sorted segment sums are much faster than np.add.at for row scatters
            order = np.argsort(flat, kind="stable")
            rows, starts = np.unique(flat[order], return_index=True)
            g2 = g.reshape((flat.size,) + shape[1:])[order]
            gt[rows] = np.add.reduceat(g2, starts, axis=0)
        return (gt,)

    return _emit(out, (table,), backward)


def _is_basic_key(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, np.integer)) or k is None or k is Ellipsis
               for k in parts)


def getitem(x, key) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    basic = _is_basic_key(key)

    def backward(g):
        gx = np.zeros(shape)
        if basic:
            gx[key] = g  # basic indexing never repeats an element
        else:
            np.add.at(gx, key, g)
        return (gx,)

    return _emit(np.array(x.data[key]), (x,), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {orig} into {tuple(np.atleast_1d(shape))}") from None
    return _emit(out, (x,), lambda g: (g.reshape(orig),))


def transpose(x, axes=None) -> Tensor:
    """Reverse axes, or permute by ``axes``; 1-D inputs pass through."""
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _emit(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swap_last(x) -> Tensor:
    x = as_tensor(x)
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return transpose(x, axes)
