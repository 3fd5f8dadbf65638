"""Binary checkpoint format.

Layout, all integers little-endian::

    b"DEVOCKPT"                 magic
    u32 version
    u32 n, n bytes              hyperparameters as UTF-8 JSON
    u32 record count
    per record: u16 name length, name, u8 ndim, ndim x u64 dims,
                prod(dims) x f64 values
    u32 CRC-32 of everything above
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from typing import Any, Callable

import numpy as np

from ..diffcore import Tensor

MAGIC = b"DEVOCKPT"
VERSION = 1

_REGISTRY: dict[str, Callable[[dict], "Model"]] = {}


class CheckpointError(ValueError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def register_model(kind: str):
    def deco(cls):
        cls.kind = kind
        _REGISTRY[kind] = cls.from_hparams
        return cls
    return deco


class Model:
    """A named parameter bundle rebuildable from its hyperparameters."""

    kind = "model"

    def hparams(self) -> dict[str, Any]:
        raise NotImplementedError

    @classmethod
    def from_hparams(cls, hp: dict) -> "Model":
        raise NotImplementedError

    def named_parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}


def dumps(model: Model) -> bytes:
    hp = dict(model.hparams())
    hp["kind"] = model.kind
    meta = json.dumps(hp, sort_keys=True).encode("utf-8")
    params = model.named_parameters()
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta)), meta,
              struct.pack("<I", len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}Q", *t.shape))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: Model, path: str | os.PathLike) -> None:
    data = dumps(model)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpointError(f"truncated checkpoint at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_header(path: str | os.PathLike) -> dict:
    """Hyperparameters stored in a checkpoint, without building the model."""
    hp, _ = _parse(_read(path))
    return hp


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _parse(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CorruptCheckpointError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if len(buf) < 4 or zlib.crc32(buf[:-4]) != struct.unpack("<I", buf[-4:])[0]:
        # a short read shows up here as well as bit rot
        raise CorruptCheckpointError("checksum mismatch: file truncated or corrupted")
    (n,) = r.unpack("<I")
    try:
        hp = json.loads(r.take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"bad hyperparameter table: {exc}") from None
    (count,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q")
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf) - 4:
        raise CorruptCheckpointError("trailing bytes after parameter records")
    return hp, arrays


def loads(buf: bytes, expect: dict | Model | None = None) -> Model:
    hp, arrays = _parse(buf)
    kind = hp.pop("kind", None)
    if kind not in _REGISTRY:
        raise CheckpointError(f"unknown model kind {kind!r}")
    if expect is not None:
        want = expect.hparams() if isinstance(expect, Model) else dict(expect)
        diffs = [f"{k}: checkpoint {hp.get(k)!r} vs expected {v!r}"
                 for k, v in want.items() if k != "kind" and hp.get(k) != v]
        if diffs:
            raise CheckpointShapeError("checkpoint incompatible with target config: " + "; ".join(diffs))
    model = _REGISTRY[kind](hp)
    params = model.named_parameters()
    missing = sorted(set(params) - set(arrays))
    extra = sorted(set(arrays) - set(params))
    if missing or extra:
        raise CheckpointShapeError(f"parameter names differ (missing {missing}, unexpected {extra})")
    for name, t in params.items():
        if arrays[name].shape != t.shape:
            raise CheckpointShapeError(
                f"parameter {name!r}: checkpoint shape {arrays[name].shape} vs model shape {t.shape}")
        t.data[...] = arrays[name]
    return model


def load_checkpoint(path: str | os.PathLike, expect: dict | Model | None = None) -> Model:
    """Rebuild a model from ``path``.

    ``expect`` (hyperparameters or a model) is compared key by key with the
    stored table; any difference raises :class:`CheckpointShapeError`.
    """
    return loads(_read(path), expect)
